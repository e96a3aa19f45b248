//! Reference evaluation of the Bingham integral over S³.
//!
//! Unit quaternions are parameterized by three angles,
//!
//! ```text
//! q = (cos η cos α, cos η sin α, sin η cos β, sin η sin β),  η, α, β ∈ [0, π/2]
//! ```
//!
//! with area element `sin η cos η dη dα dβ`. The integrand `exp(Σ λᵢ qᵢ²)`
//! is even in every coordinate, so one orthant suffices. Each angle gets its
//! own Gauss–Legendre rule; the sum over the product grid factors into a sum
//! over `η` of products of per-`η` sums over `α` and `β`, which is exactly
//! the same product quadrature at `O(Nη·(Nα + Nβ))` cost.
//!
//! The largest Λ entry is subtracted before exponentiation and the result is
//! divided by the quadrature of the constant 1, so `a(0) = 1` exactly.

use std::f64::consts::FRAC_PI_2;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::{lambda1_raw, lambda_grad_to_s, ConcentrationTriple, LambdaVec};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;

/// Per-angle node counts of the product quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub eta_nodes: usize,
    pub alpha_nodes: usize,
    pub beta_nodes: usize,
}

impl QuadratureSpec {
    pub const MIN_NODES: usize = 8;

    pub fn new(eta_nodes: usize, alpha_nodes: usize, beta_nodes: usize) -> Result<Self> {
        let spec = QuadratureSpec { eta_nodes, alpha_nodes, beta_nodes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let min = self.eta_nodes.min(self.alpha_nodes).min(self.beta_nodes);
        if min < Self::MIN_NODES {
            return Err(Error::validation(format!(
                "quadrature needs at least {} nodes per angle, got {min}",
                Self::MIN_NODES
            )));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            eta_nodes: 2 * self.eta_nodes,
            alpha_nodes: 2 * self.alpha_nodes,
            beta_nodes: 2 * self.beta_nodes,
        }
    }

    pub fn node_counts(&self) -> [usize; 3] {
        [self.eta_nodes, self.alpha_nodes, self.beta_nodes]
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { eta_nodes: 64, alpha_nodes: 64, beta_nodes: 64 }
    }
}

#[derive(Clone, Debug)]
struct AngleNode {
    weight: f64,
    cos2: f64,
    sin2: f64,
}

fn angle_rule(n: usize, jacobian: impl Fn(f64) -> f64) -> Vec<AngleNode> {
    let (x, w) = gauss_legendre_on(n, 0.0, FRAC_PI_2);
    x.into_iter()
        .zip(w)
        .map(|(t, w)| {
            let (s, c) = t.sin_cos();
            AngleNode { weight: w * jacobian(t), cos2: c * c, sin2: s * s }
        })
        .collect()
}

/// Precomputed node tables for a [`QuadratureSpec`].
#[derive(Clone, Debug)]
pub struct BinghamQuadrature {
    spec: QuadratureSpec,
    eta: Vec<AngleNode>,
    alpha: Vec<AngleNode>,
    beta: Vec<AngleNode>,
    total_weight: f64,
}

impl BinghamQuadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        let eta = angle_rule(spec.eta_nodes, |t| t.sin() * t.cos());
        let alpha = angle_rule(spec.alpha_nodes, |_| 1.0);
        let beta = angle_rule(spec.beta_nodes, |_| 1.0);
        // Same summation order as `evaluate` with Λ = 0, so that a(0) = 1 exactly.
        let a0: f64 = alpha.iter().map(|n| n.weight).sum();
        let b0: f64 = beta.iter().map(|n| n.weight).sum();
        let total_weight = eta.iter().map(|n| n.weight * a0 * b0).sum();
        Ok(BinghamQuadrature { spec, eta, alpha, beta, total_weight })
    }

    pub(crate) fn shared_default() -> Arc<BinghamQuadrature> {
        static DEFAULT: OnceLock<Arc<BinghamQuadrature>> = OnceLock::new();
        DEFAULT
            .get_or_init(|| Arc::new(BinghamQuadrature::new(QuadratureSpec::default()).expect("valid default")))
            .clone()
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    /// `log E_q[exp(qᵀ diag(λ) q)]` for uniform `q` on S³; any real λ.
    pub fn log_integral(&self, lambda: &LambdaVec) -> f64 {
        self.evaluate(lambda, false).0
    }

    /// Log-integral together with the second moments `E[qᵢ²]`, which are the
    /// derivatives of the log-integral with respect to `λᵢ`.
    pub fn log_integral_and_moments(&self, lambda: &LambdaVec) -> (f64, [f64; 4]) {
        self.evaluate(lambda, true)
    }

    pub fn log_norm(&self, s: &ConcentrationTriple) -> f64 {
        self.log_integral(&lambda1_raw(s.values()))
    }

    /// `log a` and its gradient in `(s1, s2, s3p)`.
    pub fn log_norm_and_grad_s(&self, s: &ConcentrationTriple) -> (f64, [f64; 3]) {
        self.log_norm_and_grad_raw(s.values())
    }

    /// As [`Self::log_norm_and_grad_s`] for arbitrary real triples, which the
    /// finite-difference solvers need when they step outside the ordered cone.
    pub fn log_norm_and_grad_raw(&self, s: [f64; 3]) -> (f64, [f64; 3]) {
        if s == [0.0; 3] {
            // E[R] = 0 under the Haar measure.
            return (0.0, [0.0; 3]);
        }
        let (v, m) = self.evaluate(&lambda1_raw(s), true);
        (v, lambda_grad_to_s(m))
    }

    pub fn log_norm_raw(&self, s: [f64; 3]) -> f64 {
        self.log_integral(&lambda1_raw(s))
    }

    fn evaluate(&self, lambda: &LambdaVec, with_moments: bool) -> (f64, [f64; 4]) {
        let l = lambda.0;
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by(|&a, &b| l[b].total_cmp(&l[a]));
        let top = l[idx[0]];
        // (idx0, idx1) ride on cos η, (idx2, idx3) on sin η; all gaps are ≤ 0.
        let alpha_gap = l[idx[1]] - top;
        let eta_gap = l[idx[2]] - top;
        let beta_gap = l[idx[3]] - l[idx[2]];

        let mut z = 0.0;
        let mut acc = [0.0; 4];
        for e in &self.eta {
            let ea = e.cos2 * alpha_gap;
            let (mut a, mut a_sin) = (0.0, 0.0);
            for n in &self.alpha {
                let t = n.weight * (ea * n.sin2).exp();
                a += t;
                a_sin += t * n.sin2;
            }
            let eb = e.sin2 * beta_gap;
            let (mut b, mut b_sin) = (0.0, 0.0);
            for n in &self.beta {
                let t = n.weight * (eb * n.sin2).exp();
                b += t;
                b_sin += t * n.sin2;
            }
            let w = e.weight * (e.sin2 * eta_gap).exp();
            z += w * a * b;
            if with_moments {
                acc[0] += w * e.cos2 * (a - a_sin) * b;
                acc[1] += w * e.cos2 * a_sin * b;
                acc[2] += w * e.sin2 * a * (b - b_sin);
                acc[3] += w * e.sin2 * a * b_sin;
            }
        }

        let log = top + (z / self.total_weight).ln();
        let mut moments = [0.0; 4];
        if with_moments {
            for k in 0..4 {
                moments[idx[k]] = acc[k] / z;
            }
        }
        (log, moments)
    }
}

/// `log a(F)` for the given proper singular values by product quadrature.
pub fn log_norm_oracle(s: &ConcentrationTriple, q: &QuadratureSpec) -> Result<f64> {
    q.validate()?;
    if *q == QuadratureSpec::default() {
        return Ok(BinghamQuadrature::shared_default().log_norm(s));
    }
    Ok(BinghamQuadrature::new(*q)?.log_norm(s))
}
