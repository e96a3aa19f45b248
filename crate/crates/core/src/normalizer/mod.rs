//! The normalizing constant `a(F) = ∫ exp(tr(FᵀR)) dR` and its gradient.
//!
//! `a(F)` depends on `F` only through its proper singular values. Writing the
//! rotation as a unit quaternion turns the integral into a Bingham integral
//! `E_q[exp(qᵀΛ₁q)]` over the uniform distribution on S³. Two evaluators
//! are provided:
//!
//! * [`BinghamQuadrature`], a deterministic product quadrature on S³ that
//!   serves as the reference ("oracle");
//! * [`ApproxCoeffs`], a closed-form fit that is cheap and smooth.
//!
//! The Haar measure is normalized so that `a(0) = 1`.

mod approx;
mod oracle;

use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{proper_svd, ProperSvd};

pub use approx::{
    fit_approx_coeffs, fit_approx_coeffs_with_oracle, grad_log_norm_s, lambda_space_grad_approx,
    log_norm_approx, ApproxCoeffs, FitMetadata, APPROX_COEFFS_FORMAT, APPROX_COEFFS_JSON,
};
pub use oracle::{log_norm_oracle, BinghamQuadrature, QuadratureSpec};

/// Proper singular values `(s1, s2, s3p)` with `s1 ≥ s2 ≥ |s3p|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct ConcentrationTriple {
    s1: f64,
    s2: f64,
    s3p: f64,
}

impl ConcentrationTriple {
    pub fn new(s1: f64, s2: f64, s3p: f64) -> Result<Self> {
        if !(s1.is_finite() && s2.is_finite() && s3p.is_finite()) {
            return Err(Error::validation("concentration triple must be finite"));
        }
        let tol = 1e-12 * (1.0 + s1.abs());
        if s1 + tol < s2 || s2 + tol < s3p.abs() {
            return Err(Error::validation(format!(
                "proper singular values must satisfy s1 >= s2 >= |s3p|, got ({s1}, {s2}, {s3p})"
            )));
        }
        Ok(ConcentrationTriple { s1, s2, s3p })
    }

    pub fn zero() -> Self {
        ConcentrationTriple { s1: 0.0, s2: 0.0, s3p: 0.0 }
    }

    pub fn from_svd(svd: &ProperSvd) -> Self {
        ConcentrationTriple { s1: svd.s1, s2: svd.s2, s3p: svd.s3p }
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn s3p(&self) -> f64 {
        self.s3p
    }

    pub fn values(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3p]
    }

    /// `s1 + s2 + s3p = max_R tr(FᵀR)`.
    pub fn sum(&self) -> f64 {
        self.s1 + self.s2 + self.s3p
    }
}

impl From<ConcentrationTriple> for [f64; 3] {
    fn from(s: ConcentrationTriple) -> Self {
        s.values()
    }
}

impl TryFrom<[f64; 3]> for ConcentrationTriple {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        ConcentrationTriple::new(v[0], v[1], v[2])
    }
}

/// Diagonal of a 4×4 Bingham parameter matrix. Component `i` multiplies the
/// square of quaternion component `(x, y, z, w)[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaVec(pub [f64; 4]);

impl LambdaVec {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn build_lambda1(s: &ConcentrationTriple) -> LambdaVec {
    lambda1_raw(s.values())
}

pub(crate) fn lambda1_raw([s1, s2, s3]: [f64; 3]) -> LambdaVec {
    LambdaVec([s1 - s2 - s3, s2 - s1 - s3, s3 - s1 - s2, s1 + s2 + s3])
}

/// `Λ₁` shifted so that its third entry is zero.
pub fn build_lambda2(s: &ConcentrationTriple) -> LambdaVec {
    let [s1, s2, s3] = s.values();
    LambdaVec([2.0 * (s1 - s3), 2.0 * (s2 - s3), 0.0, 2.0 * (s1 + s2)])
}

/// Chain rule from `∂/∂Λ₁` to `∂/∂(s1, s2, s3p)`.
pub(crate) fn lambda_grad_to_s(g: [f64; 4]) -> [f64; 3] {
    [g[0] - g[1] - g[2] + g[3], -g[0] + g[1] - g[2] + g[3], -g[0] - g[1] + g[2] + g[3]]
}

/// Which evaluator backs `log a(F)`.
#[derive(Clone, Debug)]
pub enum Normalizer {
    Oracle(Arc<BinghamQuadrature>),
    Approx(Arc<ApproxCoeffs>),
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::oracle()
    }
}

impl Normalizer {
    /// Oracle quadrature at the default node counts.
    pub fn oracle() -> Self {
        Normalizer::Oracle(BinghamQuadrature::shared_default())
    }

    pub fn oracle_with(spec: QuadratureSpec) -> Result<Self> {
        Ok(Normalizer::Oracle(Arc::new(BinghamQuadrature::new(spec)?)))
    }

    /// The frozen approximation shipped with the crate.
    pub fn approx() -> Self {
        Normalizer::Approx(ApproxCoeffs::shared_frozen())
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Normalizer::Oracle(_))
    }

    pub fn log_norm(&self, s: &ConcentrationTriple) -> f64 {
        match self {
            Normalizer::Oracle(q) => q.log_norm(s),
            Normalizer::Approx(c) => log_norm_approx(s, c),
        }
    }

    /// `∂ log a / ∂(s1, s2, s3p)`.
    pub fn grad_s(&self, s: &ConcentrationTriple) -> [f64; 3] {
        self.log_norm_and_grad(s).1
    }

    pub fn log_norm_and_grad(&self, s: &ConcentrationTriple) -> (f64, [f64; 3]) {
        match self {
            Normalizer::Oracle(q) => q.log_norm_and_grad_s(s),
            Normalizer::Approx(c) => (log_norm_approx(s, c), grad_log_norm_s(s, c)),
        }
    }
}

/// `∇_F log a(F) = U·diag(∂ log a/∂s)·Vᵀ`, which equals `E[R | F]`.
pub fn grad_log_norm_f(f: &Matrix3<f64>, normalizer: &Normalizer) -> Matrix3<f64> {
    let svd = proper_svd(f);
    grad_log_norm_f_svd(&svd, normalizer)
}

pub(crate) fn grad_log_norm_f_svd(svd: &ProperSvd, normalizer: &Normalizer) -> Matrix3<f64> {
    svd.compose(normalizer.grad_s(&ConcentrationTriple::from_svd(svd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_triple<R: Rng>(rng: &mut R, max: f64) -> ConcentrationTriple {
        let s1 = rng.random_range(0.0..max);
        let s2 = rng.random_range(0.0..=1.0) * s1;
        let s3 = rng.random_range(-1.0..=1.0) * s2;
        ConcentrationTriple::new(s1, s2, s3).unwrap()
    }

    #[test]
    fn lambda1_examples() {
        let l = build_lambda1(&ConcentrationTriple::new(25.0, 5.0, 1.0).unwrap());
        assert_eq!(l.0, [19.0, -21.0, -29.0, 31.0]);
        assert_eq!(build_lambda1(&ConcentrationTriple::zero()).0, [0.0; 4]);
        let l = build_lambda1(&ConcentrationTriple::new(5.0, 5.0, 5.0).unwrap());
        assert_eq!(l.0, [-5.0, -5.0, -5.0, 15.0]);
    }

    #[test]
    fn lambda2_examples_and_shift_identity() {
        let l = build_lambda2(&ConcentrationTriple::new(25.0, 5.0, 1.0).unwrap());
        assert_eq!(l.0, [48.0, 8.0, 0.0, 60.0]);
        assert_eq!(build_lambda2(&ConcentrationTriple::zero()).0, [0.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = random_triple(&mut rng, 40.0);
            let (l1, l2) = (build_lambda1(&s), build_lambda2(&s));
            let shift = s.s3p() - s.s1() - s.s2();
            for i in 0..4 {
                assert!((l2.0[i] - (l1.0[i] - shift)).abs() <= 1e-12 * (1.0 + s.s1()));
            }
            assert!(l1.sum().abs() < 1e-12 * (1.0 + s.s1()));
        }
    }

    #[test]
    fn triple_validation() {
        assert!(ConcentrationTriple::new(1.0, 2.0, 0.0).is_err());
        assert!(ConcentrationTriple::new(3.0, 2.0, -2.5).is_err());
        assert!(ConcentrationTriple::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(ConcentrationTriple::new(3.0, 2.0, -2.0).is_ok());
    }

    #[test]
    fn f_gradient_examples() {
        let n = Normalizer::oracle();
        assert_eq!(grad_log_norm_f(&Matrix3::zeros(), &n), Matrix3::zeros());

        let g = grad_log_norm_f(&Matrix3::from_diagonal_element(20.0), &n);
        let c = g[(0, 0)];
        assert!(c > 0.0 && c < 1.0);
        assert!((g - Matrix3::identity() * c).norm() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for normalizer in [Normalizer::oracle(), Normalizer::approx()] {
            for _ in 0..50 {
                let f = Matrix3::from_fn(|_, _| rng.random_range(-8.0..8.0));
                let a = random_rotation(&mut rng);
                let lhs = grad_log_norm_f(&(a.matrix() * f), &normalizer);
                let rhs = a.matrix() * grad_log_norm_f(&f, &normalizer);
                assert!((lhs - rhs).norm() < 1e-6);
            }
        }
    }
}
