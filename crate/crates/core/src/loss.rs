//! Negative log-likelihood loss `log a(F) − tr(FᵀR)` and executable versions
//! of its Lipschitz, convexity and smoothness bounds.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FisherParams, MatrixFisher};
use crate::normalizer::{ConcentrationTriple, Normalizer};
use crate::rotation::{flatten, proper_svd, random_rotation, RotationMatrix};

pub const DEFAULT_OVERSCALE: f64 = 1.05;

/// Bound on `‖∂loss/∂F‖`.
pub const LIPSCHITZ_BOUND: f64 = 6.0;
/// `‖E[R|F]‖ + ‖R‖ ≤ 2√3`.
pub const LIPSCHITZ_TIGHT: f64 = 3.464_101_615_137_754_6;
pub const CONVEXITY_TOL: f64 = 1e-6;
/// Bound on `vᵀ∇²loss v` for unit `v`.
pub const HESSIAN_BOUND: f64 = 9.0;
/// `Var[⟨v, R⟩] ≤ E[‖R‖²] = 3`.
pub const HESSIAN_TIGHT: f64 = 3.0;
/// Slack on the Lipschitz assertion.
pub const LIPSCHITZ_SLACK: f64 = 1e-6;
/// Slack on the Hessian assertion, covering finite-difference error.
pub const HESSIAN_SLACK: f64 = 1e-3;

const HESSIAN_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    /// `∂loss/∂F`
    pub grad: Matrix3<f64>,
}

pub fn nll_loss(f: &FisherParams, r: &RotationMatrix, normalizer: &Normalizer) -> LossValue {
    let d = MatrixFisher::with_normalizer(*f, normalizer.clone());
    nll_from(&d, r, 1.0)
}

/// `overscale · log a(F) − tr(FᵀR)`; `overscale = 1` is [`nll_loss`].
pub fn nll_loss_regularized(
    f: &FisherParams,
    r: &RotationMatrix,
    overscale: f64,
    normalizer: &Normalizer,
) -> Result<LossValue> {
    check_overscale(overscale)?;
    let d = MatrixFisher::with_normalizer(*f, normalizer.clone());
    Ok(nll_from(&d, r, overscale))
}

pub(crate) fn check_overscale(overscale: f64) -> Result<()> {
    if overscale.is_finite() && overscale >= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("overscale must be at least 1, got {overscale}")))
    }
}

fn nll_from(d: &MatrixFisher, r: &RotationMatrix, overscale: f64) -> LossValue {
    let f = d.params().matrix();
    let value = overscale * d.log_norm() - f.dot(r.matrix());
    let grad = d.mean_rotation_matrix() * overscale - r.matrix();
    LossValue { value, grad }
}

/// Loss value alone, without the SVD-based gradient.
fn loss_value(f: &Matrix3<f64>, r: &RotationMatrix, normalizer: &Normalizer) -> f64 {
    let s = ConcentrationTriple::from_svd(&proper_svd(f));
    normalizer.log_norm(&s) - f.dot(r.matrix())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSection {
    pub samples: usize,
    pub radius: f64,
    pub max_grad_norm: f64,
    pub bound: f64,
    pub tight_bound: f64,
    pub within_tight_bound: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexitySection {
    pub samples: usize,
    pub radius: f64,
    /// Largest `loss(λF₁ + (1−λ)F₂) − λ·loss(F₁) − (1−λ)·loss(F₂)`.
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianSection {
    pub samples: usize,
    pub radius: f64,
    pub max_quadratic_form: f64,
    pub min_quadratic_form: f64,
    pub bound: f64,
    pub tight_bound: f64,
    pub within_tight_bound: bool,
    pub passed: bool,
}

/// Results of the property sweeps; absent sections were not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub normalizer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convexity: Option<ConvexitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian: Option<HessianSection>,
}

impl PropertyReport {
    pub fn new(normalizer: &Normalizer) -> Self {
        let name = if normalizer.is_oracle() { "oracle" } else { "approx" };
        PropertyReport { normalizer: name.to_string(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.lipschitz.as_ref().is_none_or(|s| s.passed)
            && self.convexity.as_ref().is_none_or(|s| s.passed)
            && self.hessian.as_ref().is_none_or(|s| s.passed)
    }

    pub fn merge(mut self, other: PropertyReport) -> Self {
        self.lipschitz = other.lipschitz.or(self.lipschitz);
        self.convexity = other.convexity.or(self.convexity);
        self.hessian = other.hessian.or(self.hessian);
        self
    }
}

fn check_sweep(n_samples: usize, radius: f64) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::validation("property sweep needs at least one sample"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::validation(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

/// Uniform draw from the Frobenius ball of the given radius in R⁹.
pub fn sample_frobenius_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Matrix3<f64> {
    unit_direction(rng) * radius * rng.random::<f64>().powf(1.0 / 9.0)
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let g = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Gradient norms at random `F` in the ball and Haar-random targets `R`.
pub fn check_lipschitz(n_samples: usize, radius: f64, seed: u64, normalizer: &Normalizer) -> Result<PropertyReport> {
    check_sweep(n_samples, radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_grad_norm: f64 = 0.0;
    for _ in 0..n_samples {
        let f = FisherParams::new(sample_frobenius_ball(&mut rng, radius))?;
        let r = random_rotation(&mut rng);
        let g = nll_loss(&f, &r, normalizer).grad;
        max_grad_norm = max_grad_norm.max(flatten(&g).norm());
    }
    let mut report = PropertyReport::new(normalizer);
    report.lipschitz = Some(LipschitzSection {
        samples: n_samples,
        radius,
        max_grad_norm,
        bound: LIPSCHITZ_BOUND,
        tight_bound: LIPSCHITZ_TIGHT,
        within_tight_bound: max_grad_norm <= LIPSCHITZ_TIGHT + LIPSCHITZ_SLACK,
        passed: max_grad_norm <= LIPSCHITZ_BOUND + LIPSCHITZ_SLACK,
    });
    Ok(report)
}

/// `loss(λF₁ + (1−λ)F₂) − λ·loss(F₁) − (1−λ)·loss(F₂)` for one triple.
pub fn jensen_gap(f1: &Matrix3<f64>, f2: &Matrix3<f64>, lambda: f64, r: &RotationMatrix, normalizer: &Normalizer) -> f64 {
    let mid = f1 * lambda + f2 * (1.0 - lambda);
    loss_value(&mid, r, normalizer)
        - lambda * loss_value(f1, r, normalizer)
        - (1.0 - lambda) * loss_value(f2, r, normalizer)
}

pub fn check_convexity(n_samples: usize, radius: f64, seed: u64, normalizer: &Normalizer) -> Result<PropertyReport> {
    check_sweep(n_samples, radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let f1 = sample_frobenius_ball(&mut rng, radius);
        let f2 = sample_frobenius_ball(&mut rng, radius);
        let lambda: f64 = rng.random();
        let r = random_rotation(&mut rng);
        max_violation = max_violation.max(jensen_gap(&f1, &f2, lambda, &r, normalizer));
    }
    let mut report = PropertyReport::new(normalizer);
    report.convexity = Some(ConvexitySection {
        samples: n_samples,
        radius,
        max_violation,
        tolerance: CONVEXITY_TOL,
        passed: max_violation <= CONVEXITY_TOL,
    });
    Ok(report)
}

/// `vᵀ∇²loss(F)v` by a second central difference along `v`.
pub fn hessian_quadratic_form(f: &Matrix3<f64>, v: &Matrix3<f64>, normalizer: &Normalizer) -> f64 {
    let h = HESSIAN_STEP;
    let at = |m: Matrix3<f64>| normalizer.log_norm(&ConcentrationTriple::from_svd(&proper_svd(&m)));
    (at(f + v * h) + at(f - v * h) - 2.0 * at(*f)) / (h * h)
}

pub fn check_hessian_bound(n_samples: usize, radius: f64, seed: u64, normalizer: &Normalizer) -> Result<PropertyReport> {
    check_sweep(n_samples, radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_q = f64::NEG_INFINITY;
    let mut min_q = f64::INFINITY;
    for _ in 0..n_samples {
        let f = sample_frobenius_ball(&mut rng, radius);
        let v = unit_direction(&mut rng);
        let q = hessian_quadratic_form(&f, &v, normalizer);
        max_q = max_q.max(q);
        min_q = min_q.min(q);
    }
    let mut report = PropertyReport::new(normalizer);
    report.hessian = Some(HessianSection {
        samples: n_samples,
        radius,
        max_quadratic_form: max_q,
        min_quadratic_form: min_q,
        bound: HESSIAN_BOUND,
        tight_bound: HESSIAN_TIGHT,
        within_tight_bound: max_q <= HESSIAN_TIGHT + HESSIAN_SLACK,
        passed: max_q <= HESSIAN_BOUND + HESSIAN_SLACK,
    });
    Ok(report)
}
