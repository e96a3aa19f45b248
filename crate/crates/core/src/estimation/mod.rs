//! Maximum-likelihood fitting of a matrix Fisher distribution to rotations.
//!
//! The mean negative log-likelihood of samples `Rₖ` is
//! `log a(F) − tr(FᵀM̄)` with `M̄` the sample mean, so the minimizer solves
//! `E[R | F] = M̄`. [`fit_moment`] solves that equation in the proper singular
//! values directly; [`fit_gradient_descent`] runs full-batch descent on the
//! loss from `F = 0`.

mod experiment;

pub use experiment::{
    run_experiment, run_experiment_with, ExperimentReport, GridExport, Scenario, ScenarioKind, TwoModeSummary, UnimodalSummary,
};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherParams;
use crate::loss::check_overscale;
use crate::normalizer::{BinghamQuadrature, ConcentrationTriple, Normalizer};
use crate::rotation::{proper_svd, RotationMatrix};

/// Margin below 1 that the sample-mean singular values must respect.
pub const FEASIBILITY_MARGIN: f64 = 1e-6;
pub const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Moment,
    GradientDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: FitMethod,
    #[serde(rename = "F")]
    pub params: FisherParams,
    pub singular_values: [f64; 3],
    pub mode: RotationMatrix,
    pub iterations: usize,
    /// Mean negative log-likelihood over the samples.
    pub final_loss: f64,
    /// Frobenius norm of the final loss gradient.
    pub gradient_norm: f64,
    pub converged: bool,
    /// Loss after each descent step, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

pub fn sample_mean(samples: &[RotationMatrix]) -> Result<Matrix3<f64>> {
    if samples.is_empty() {
        return Err(Error::validation("no samples"));
    }
    let sum = samples.iter().fold(Matrix3::zeros(), |acc, r| acc + r.matrix());
    Ok(sum / samples.len() as f64)
}

/// Moment matching: solves `∂ log a/∂s (s) = (d1, d2, d3p)` for the proper
/// singular values `d` of the sample mean by damped Newton iteration.
pub fn fit_moment(samples: &[RotationMatrix]) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::validation("moment fit needs at least 2 samples"));
    }
    fit_moment_from_mean(&sample_mean(samples)?, &BinghamQuadrature::shared_default())
}

pub fn fit_moment_from_mean(mean: &Matrix3<f64>, oracle: &BinghamQuadrature) -> Result<FitResult> {
    let svd = proper_svd(mean);
    let d = svd.singular_values();
    if d[0] >= 1.0 - FEASIBILITY_MARGIN {
        return Err(Error::InfeasibleMoments(d[0]));
    }
    let residual = |s: [f64; 3]| {
        let g = oracle.log_norm_and_grad_raw(s).1;
        [g[0] - d[0], g[1] - d[1], g[2] - d[2]]
    };
    let norm = |r: [f64; 3]| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();

    let mut s = [0.0; 3];
    let mut r = residual(s);
    let mut iterations = 0;
    while norm(r) > NEWTON_TOL {
        if iterations == NEWTON_MAX_ITER {
            return Err(Error::NonConvergence(iterations));
        }
        iterations += 1;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let (mut up, mut dn) = (s, s);
            up[k] += NEWTON_FD_STEP;
            dn[k] -= NEWTON_FD_STEP;
            let (gu, gd) = (residual(up), residual(dn));
            for i in 0..3 {
                jac[(i, k)] = (gu[i] - gd[i]) / (2.0 * NEWTON_FD_STEP);
            }
        }
        let rv = nalgebra::Vector3::from(r);
        let step = jac.lu().solve(&-rv).ok_or(Error::NonConvergence(iterations))?;
        let mut t = 1.0;
        loop {
            let trial = [s[0] + t * step[0], s[1] + t * step[1], s[2] + t * step[2]];
            let rt = residual(trial);
            if norm(rt) < norm(r) {
                s = trial;
                r = rt;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                // No decrease along the Newton direction; accept only if
                // already at the attainable precision.
                if norm(r) < 1e-9 {
                    return finish_moment(&svd, s, d, oracle, iterations, norm(r), true);
                }
                return Err(Error::NonConvergence(iterations));
            }
        }
    }
    let res = norm(r);
    finish_moment(&svd, s, d, oracle, iterations, res, true)
}

fn finish_moment(
    svd: &crate::rotation::ProperSvd,
    s: [f64; 3],
    d: [f64; 3],
    oracle: &BinghamQuadrature,
    iterations: usize,
    residual: f64,
    converged: bool,
) -> Result<FitResult> {
    let f = FisherParams::new(svd.compose(s))?;
    let final_loss = oracle.log_norm_raw(s) - (s[0] * d[0] + s[1] * d[1] + s[2] * d[2]);
    let fs = proper_svd(f.matrix());
    Ok(FitResult {
        method: FitMethod::Moment,
        params: f,
        singular_values: fs.singular_values(),
        mode: fs.mode(),
        iterations,
        final_loss,
        gradient_norm: residual,
        converged,
        loss_history: Vec::new(),
    })
}

/// Settings for [`fit_gradient_descent`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub learning_rate: f64,
    /// Iterations after which the rate is multiplied by `decay_factor`.
    pub decay_at: Vec<usize>,
    pub decay_factor: f64,
    pub max_iterations: usize,
    /// Stop once the Frobenius norm of the gradient falls below this value.
    pub grad_tol: f64,
    /// Multiplier on the `log a` term; 1 is the plain likelihood.
    pub overscale: f64,
    /// Starting point; zero when absent.
    #[serde(rename = "init_F")]
    pub init: Option<FisherParams>,
    pub record_history: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            learning_rate: 0.2,
            decay_at: Vec::new(),
            decay_factor: 0.1,
            max_iterations: 500_000,
            grad_tol: 1e-7,
            overscale: 1.0,
            init: None,
            record_history: false,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return Err(Error::validation("decay factor must be positive"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::validation("gradient tolerance must be positive"));
        }
        check_overscale(self.overscale)
    }

    fn rate_at(&self, iteration: usize) -> f64 {
        let decays = self.decay_at.iter().filter(|&&k| iteration >= k).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Largest step size for which descent is guaranteed: `2/β` with the
/// smoothness bound `β = 9·overscale`.
pub fn admissible_rate(overscale: f64) -> f64 {
    2.0 / (9.0 * overscale)
}

/// Full-batch gradient descent on the mean (optionally overscaled) NLL.
pub fn fit_gradient_descent(samples: &[RotationMatrix], cfg: &GdConfig) -> Result<FitResult> {
    fit_gradient_descent_with(samples, cfg, &Normalizer::default())
}

pub fn fit_gradient_descent_with(samples: &[RotationMatrix], cfg: &GdConfig, normalizer: &Normalizer) -> Result<FitResult> {
    fit_gradient_descent_observed(samples, cfg, normalizer, |_, _, _| {})
}

/// Descent that reports `(iteration, F, loss)` for the start and after every step.
pub fn fit_gradient_descent_observed<O>(
    samples: &[RotationMatrix],
    cfg: &GdConfig,
    normalizer: &Normalizer,
    mut observe: O,
) -> Result<FitResult>
where
    O: FnMut(usize, &Matrix3<f64>, f64),
{
    cfg.validate()?;
    let mean = sample_mean(samples)?;
    let c = cfg.overscale;
    let eval = |f: &Matrix3<f64>| {
        let svd = proper_svd(f);
        let (log_a, g) = normalizer.log_norm_and_grad(&ConcentrationTriple::from_svd(&svd));
        (c * log_a - f.dot(&mean), svd.compose(g) * c - mean)
    };
    let tol_slack = |v: f64| 1e-9 * v.abs().max(1.0);

    let mut f = cfg.init.map(|p| *p.matrix()).unwrap_or_else(Matrix3::zeros);
    let (mut loss, mut grad) = eval(&f);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = grad.norm() < cfg.grad_tol;
    observe(0, &f, loss);
    while !converged && iterations < cfg.max_iterations {
        let rate = cfg.rate_at(iterations);
        let next = f - grad * rate;
        let (next_loss, next_grad) = eval(&next);
        iterations += 1;
        if next_loss > loss + tol_slack(loss) && rate <= admissible_rate(c) {
            return Err(Error::Divergence { iteration: iterations, previous: loss, current: next_loss, rate });
        }
        f = next;
        loss = next_loss;
        grad = next_grad;
        if cfg.record_history {
            history.push(loss);
        }
        observe(iterations, &f, loss);
        converged = grad.norm() < cfg.grad_tol;
    }
    let params = FisherParams::new(f)?;
    let svd = proper_svd(&f);
    Ok(FitResult {
        method: FitMethod::GradientDescent,
        params,
        singular_values: svd.singular_values(),
        mode: svd.mode(),
        iterations,
        final_loss: loss,
        gradient_norm: grad.norm(),
        converged,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::MatrixFisher;
    use crate::rotation::{axis_angle_to_rot, geodesic_distance, random_rotation};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_samples(t: f64, n: usize, seed: u64) -> Vec<RotationMatrix> {
        MatrixFisher::from_matrix(Matrix3::from_diagonal_element(t)).unwrap().sample(n, seed).unwrap()
    }

    #[test]
    fn cancelling_samples_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let flip = [
            RotationMatrix::identity(),
            axis_angle_to_rot(&Vector3::x(), std::f64::consts::PI).unwrap(),
            axis_angle_to_rot(&Vector3::y(), std::f64::consts::PI).unwrap(),
            axis_angle_to_rot(&Vector3::z(), std::f64::consts::PI).unwrap(),
        ];
        let r = random_rotation(&mut rng);
        let samples: Vec<_> = flip.iter().map(|p| *p * r).collect();
        assert!(sample_mean(&samples).unwrap().amax() < 1e-15);
        let fit = fit_moment(&samples).unwrap();
        assert!(fit.params.matrix().amax() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_moment(&[RotationMatrix::identity()]).is_err());
        let same = vec![RotationMatrix::identity(); 5];
        assert!(matches!(fit_moment(&same), Err(Error::InfeasibleMoments(_))));
        assert!(fit_gradient_descent(&[], &GdConfig::default()).is_err());
        let bad = GdConfig { learning_rate: -1.0, ..GdConfig::default() };
        assert!(fit_gradient_descent(&same, &bad).is_err());
        let bad = GdConfig { overscale: 0.5, ..GdConfig::default() };
        assert!(fit_gradient_descent(&same, &bad).is_err());
    }

    #[test]
    fn moment_fit_recovers_concentrated_distribution() {
        let samples = diag_samples(20.0, 10_000, 62);
        let fit = fit_moment(&samples).unwrap();
        assert!(fit.converged);
        assert!(geodesic_distance(&fit.mode, &RotationMatrix::identity()).to_degrees() < 2.0);
        for s in fit.singular_values {
            assert!((s - 20.0).abs() < 4.0, "{:?}", fit.singular_values);
        }
    }

    #[test]
    fn moment_fit_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let d = MatrixFisher::from_matrix(Matrix3::from_diagonal(&Vector3::new(6.0, 3.0, 1.0))).unwrap();
        let samples = d.sample(2_000, 64).unwrap();
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let moved: Vec<_> = samples.iter().map(|r| a * *r * b.transpose()).collect();
        let f0 = fit_moment(&samples).unwrap().params;
        let f1 = fit_moment(&moved).unwrap().params;
        let expected = a.matrix() * f0.matrix() * b.matrix().transpose();
        assert!((f1.matrix() - expected).norm() < 1e-6);
    }

    #[test]
    fn descent_agrees_with_moment_fit() {
        let samples = MatrixFisher::from_matrix(Matrix3::from_diagonal(&Vector3::new(4.0, 3.0, 2.0)))
            .unwrap()
            .sample(3_000, 65)
            .unwrap();
        let m = fit_moment(&samples).unwrap();
        let cfg = GdConfig { record_history: true, ..GdConfig::default() };
        let g = fit_gradient_descent(&samples, &cfg).unwrap();
        assert!(g.converged);
        assert!((g.params.matrix() - m.params.matrix()).norm() < 1e-3);
        assert!(g.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        assert!((g.final_loss - m.final_loss).abs() < 1e-8);
    }

    #[test]
    fn single_sample_mode_approaches_target() {
        let target = axis_angle_to_rot(&Vector3::new(1.0, 1.0, 0.0), 2.0).unwrap();
        let cfg = GdConfig {
            init: Some(FisherParams::new(Matrix3::from_diagonal_element(5.0)).unwrap()),
            max_iterations: 10,
            ..GdConfig::default()
        };
        let mut prev = std::f64::consts::PI;
        let mut f = *cfg.init.unwrap().matrix();
        for _ in 0..10 {
            let step = GdConfig { init: Some(FisherParams::new(f).unwrap()), max_iterations: 1, ..cfg.clone() };
            let out = fit_gradient_descent(&[target], &step).unwrap();
            let d = geodesic_distance(&out.mode, &target);
            assert!(d < prev, "{d} !< {prev}");
            prev = d;
            f = *out.params.matrix();
        }
    }

    #[test]
    fn regularized_descent_stops_short_of_plain_fit() {
        let samples = diag_samples(5.0, 2_000, 66);
        let plain = fit_gradient_descent(&samples, &GdConfig::default()).unwrap();
        let reg = fit_gradient_descent(&samples, &GdConfig { overscale: 1.05, learning_rate: 0.19, ..GdConfig::default() }).unwrap();
        assert!(reg.converged);
        let (p, r) = (plain.singular_values, reg.singular_values);
        assert!(r.iter().zip(&p).all(|(r, p)| r < p), "{r:?} vs {p:?}");
    }

    #[test]
    fn decay_schedule() {
        let cfg = GdConfig { decay_at: vec![10, 20], decay_factor: 0.5, ..GdConfig::default() };
        assert_eq!(cfg.rate_at(0), 0.2);
        assert_eq!(cfg.rate_at(10), 0.1);
        assert_eq!(cfg.rate_at(25), 0.05);
    }
}
