//! Refits the approximation constants against the default oracle and writes
//! them to the path given as the first argument (stdout if absent).

use matfisher::normalizer::{fit_approx_coeffs_with_oracle, BinghamQuadrature, QuadratureSpec};

fn main() -> matfisher::Result<()> {
    let oracle = BinghamQuadrature::new(QuadratureSpec::default())?;
    let coeffs = fit_approx_coeffs_with_oracle(&oracle)?;
    let json = coeffs.to_json()? + "\n";
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    eprintln!(
        "tau {:.6} max scaled residual {:.4} iterations {}",
        coeffs.temperature, coeffs.metadata.max_scaled_residual, coeffs.metadata.iterations
    );
    Ok(())
}
