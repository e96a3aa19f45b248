//! Synthetic fitting runs: draw training rotations from a known generator,
//! fit by gradient descent and record how the estimate evolves.
//!
//! The two-mode generator mixes a concentrated distribution around `I` with
//! its copy rotated by π about `e₃`, which leaves only the third axis
//! determined. Test predictions for that scenario come from short descent
//! runs on a few labels drawn from the same mixture, one run per test item.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_gradient_descent_observed, FitResult, GdConfig};
use crate::error::{Error, Result};
use crate::fisher::{FisherParams, MatrixFisher};
use crate::metrics::{histogram_deg, is_u_shaped};
use crate::normalizer::Normalizer;
use crate::rotation::{axis_angle_to_rot, geodesic_distance, proper_svd, RotationMatrix};
use crate::viz::{axis_marginal, Axis, SphereGrid};

pub const HISTOGRAM_BINS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioKind {
    Unimodal {
        #[serde(rename = "F")]
        f: FisherParams,
    },
    /// Equal mixture of `c·I` and its copy rotated by π about `e₃`.
    TwoMode { concentration: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n_samples: usize,
    #[serde(default)]
    pub gd: GdConfig,
    /// Iterations at which marginal grids are exported; iterations beyond the
    /// last step are exported at the final iterate.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    /// Test items of the two-mode scenario.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_labels_per_test")]
    pub labels_per_test: usize,
    #[serde(default = "default_predict_steps")]
    pub predict_steps: usize,
}

fn default_grid() -> [usize; 2] {
    [32, 64]
}

fn default_n_test() -> usize {
    200
}

fn default_labels_per_test() -> usize {
    3
}

fn default_predict_steps() -> usize {
    20
}

impl Scenario {
    pub fn unimodal(f: FisherParams, n_samples: usize) -> Self {
        Self::with_kind(ScenarioKind::Unimodal { f }, n_samples)
    }

    pub fn two_mode(concentration: f64, n_samples: usize) -> Self {
        Self::with_kind(ScenarioKind::TwoMode { concentration }, n_samples)
    }

    fn with_kind(kind: ScenarioKind, n_samples: usize) -> Self {
        Scenario {
            kind,
            n_samples,
            gd: GdConfig::default(),
            checkpoints: Vec::new(),
            grid: default_grid(),
            n_test: default_n_test(),
            labels_per_test: default_labels_per_test(),
            predict_steps: default_predict_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gd.validate()?;
        if self.n_samples == 0 {
            return Err(Error::validation("scenario needs at least one training sample"));
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(Error::validation("grid dimensions must be positive"));
        }
        if let ScenarioKind::TwoMode { concentration } = self.kind {
            if !(concentration.is_finite() && concentration > 0.0) {
                return Err(Error::validation("two-mode concentration must be positive"));
            }
            if self.n_test == 0 || self.labels_per_test == 0 || self.predict_steps == 0 {
                return Err(Error::validation("two-mode scenario needs test items, labels and prediction steps"));
            }
        }
        Ok(())
    }
}

/// Axis marginals of one iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridExport {
    pub iteration: usize,
    #[serde(rename = "F")]
    pub params: FisherParams,
    pub singular_values: [f64; 3],
    /// Marginals of `R·e₁`, `R·e₂`, `R·e₃`.
    pub marginals: Vec<SphereGrid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnimodalSummary {
    pub true_singular_values: [f64; 3],
    pub mode_error_deg: f64,
    pub frobenius_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoModeSummary {
    /// `max(s2, |s3p|) / s1` of the pooled fit.
    pub plane_ratio: f64,
    /// Angle between the fitted determined axis and `e₃`, in degrees.
    pub axis_error_deg: f64,
    /// `(max − min) / mean` of the fitted `R·e₁` marginal along the equator.
    pub marginal_spread: f64,
    /// Test errors in 30° bins over `[0°, 180°]`.
    pub histogram: Vec<usize>,
    pub u_shaped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub fit: FitResult,
    /// Per iteration, starting before the first step. Unimodal: geodesic
    /// distance to the true mode. Two-mode: angle of the determined axis.
    pub mode_error_deg: Vec<f64>,
    pub loss_monotone: bool,
    pub grids: Vec<GridExport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unimodal: Option<UnimodalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_mode: Option<TwoModeSummary>,
}

fn flip() -> RotationMatrix {
    axis_angle_to_rot(&Vector3::z(), std::f64::consts::PI).expect("unit axis")
}

fn two_mode_samples(base: &MatrixFisher, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<RotationMatrix>> {
    let flip = flip();
    let mut out = base.sample(n, rng.random())?;
    for r in out.iter_mut() {
        if rng.random_bool(0.5) {
            *r = flip * *r;
        }
    }
    Ok(out)
}

/// Direction of the left singular vector of the largest proper singular value.
fn determined_axis(f: &Matrix3<f64>) -> Vector3<f64> {
    proper_svd(f).u.matrix().column(0).clone_owned()
}

fn axis_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos().to_degrees()
}

fn marginals(f: &Matrix3<f64>, grid: [usize; 2]) -> Result<Vec<SphereGrid>> {
    let d = MatrixFisher::from_matrix(*f)?;
    Axis::ALL.iter().map(|&a| axis_marginal(&d, a, grid[0], grid[1])).collect()
}

/// Spread of a marginal over the two rows straddling the equator.
fn equator_spread(g: &SphereGrid) -> f64 {
    let rows: Vec<usize> = if g.height % 2 == 0 { vec![g.height / 2 - 1, g.height / 2] } else { vec![g.height / 2] };
    let vals: Vec<f64> =
        (0..g.width).map(|c| rows.iter().map(|&r| g.get(r, c)).sum::<f64>() / rows.len() as f64).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / (vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn run_experiment(scenario: &Scenario, seed: u64) -> Result<ExperimentReport> {
    run_experiment_with(scenario, seed, &Normalizer::default())
}

pub fn run_experiment_with(scenario: &Scenario, seed: u64, normalizer: &Normalizer) -> Result<ExperimentReport> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, truth) = match &scenario.kind {
        ScenarioKind::Unimodal { f } => {
            let d = MatrixFisher::with_normalizer(*f, normalizer.clone());
            (d.sample(scenario.n_samples, rng.random())?, Some(d))
        }
        ScenarioKind::TwoMode { concentration } => {
            let base = MatrixFisher::from_matrix(Matrix3::from_diagonal_element(*concentration))?;
            (two_mode_samples(&base, scenario.n_samples, &mut rng)?, None)
        }
    };
    let true_mode = truth.as_ref().map(|d| d.mode().rotation);

    let mut cfg = scenario.gd.clone();
    cfg.record_history = true;
    let mut checkpoints = scenario.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut snapshots: Vec<(usize, Matrix3<f64>)> = Vec::new();
    let mut mode_error = Vec::new();
    let mut losses = Vec::new();
    let fit = fit_gradient_descent_observed(&samples, &cfg, normalizer, |k, f, loss| {
        losses.push(loss);
        mode_error.push(match &true_mode {
            Some(m) => geodesic_distance(&proper_svd(f).mode(), m).to_degrees(),
            None => axis_angle_deg(&determined_axis(f), &Vector3::z()),
        });
        if checkpoints.binary_search(&k).is_ok() {
            snapshots.push((k, *f));
        }
    })?;
    let last = *fit.params.matrix();
    for &k in checkpoints.iter().filter(|&&k| k > fit.iterations) {
        snapshots.push((k, last));
    }

    let grids = snapshots
        .iter()
        .map(|(k, f)| {
            Ok(GridExport {
                iteration: *k,
                params: FisherParams::new(*f)?,
                singular_values: proper_svd(f).singular_values(),
                marginals: marginals(f, scenario.grid)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let loss_monotone = losses.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));

    let (unimodal, two_mode) = match &scenario.kind {
        ScenarioKind::Unimodal { f } => {
            let t = truth.as_ref().expect("unimodal truth");
            let summary = UnimodalSummary {
                true_singular_values: t.svd().singular_values(),
                mode_error_deg: geodesic_distance(&fit.mode, &t.mode().rotation).to_degrees(),
                frobenius_error: (fit.params.matrix() - f.matrix()).norm(),
            };
            (Some(summary), None)
        }
        ScenarioKind::TwoMode { concentration } => {
            let s = fit.singular_values;
            let fitted = marginals(&last, [scenario.grid[0].max(8), scenario.grid[1].max(16)])?;
            let base = MatrixFisher::from_matrix(Matrix3::from_diagonal_element(*concentration))?;
            let predict = GdConfig { max_iterations: scenario.predict_steps, grad_tol: 1e-12, ..scenario.gd.clone() };
            let mut errors = Vec::with_capacity(scenario.n_test);
            for _ in 0..scenario.n_test {
                let gt = two_mode_samples(&base, 1, &mut rng)?[0];
                let labels = two_mode_samples(&base, scenario.labels_per_test, &mut rng)?;
                let pred = fit_gradient_descent_observed(&labels, &predict, normalizer, |_, _, _| {})?;
                errors.push(geodesic_distance(&gt, &pred.mode).to_degrees());
            }
            let histogram = histogram_deg(&errors, HISTOGRAM_BINS);
            let summary = TwoModeSummary {
                plane_ratio: s[1].max(s[2].abs()) / s[0],
                axis_error_deg: axis_angle_deg(&determined_axis(&last), &Vector3::z()),
                marginal_spread: equator_spread(&fitted[0]),
                u_shaped: is_u_shaped(&histogram),
                histogram,
            };
            (None, Some(summary))
        }
    };

    Ok(ExperimentReport { seed, fit, mode_error_deg: mode_error, loss_monotone, grids, unimodal, two_mode })
}
