//! Closed-form approximation of `log a` in the proper singular values.
//!
//! ```text
//! m(s)      = τ · (logsumexp(Λ₁(s) / τ) − ln 4)
//! approx(s) = m + f1(s) · (1 − exp(f2(s) · m))
//! ```
//!
//! `m` is a smoothed `max Λ₁ = s1 + s2 + s3p`: it has the right asymptotic
//! slope, vanishes at the origin, and its Hessian there is `I/τ`. `f1` and
//! `f2` are quadratics in `s`. Fixing `f1(0)·f2(0) = 1 − τ·h`, where `h` is
//! the oracle's Hessian diagonal at the origin, matches the gradient (zero)
//! and the Hessian (`h·I`) at the origin exactly. The remaining coefficients
//! and `τ` are fitted by Levenberg–Marquardt against oracle values.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{build_lambda2, lambda1_raw, lambda_grad_to_s, BinghamQuadrature, ConcentrationTriple, LambdaVec};
use crate::error::{Error, Result};

pub const APPROX_COEFFS_FORMAT: &str = "matfisher-approx-coeffs/1";

/// The constants file shipped with the crate.
pub const APPROX_COEFFS_JSON: &str = include_str!("../../data/approx_coeffs.json");

const GRADIENT_TOL: f64 = 1e-6;
const HESSIAN_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;

/// Second-degree polynomial in `(s1, s2, s3p)`, coefficients named by monomial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub c: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s1s1: f64,
    pub s2s2: f64,
    pub s3s3: f64,
    pub s1s2: f64,
    pub s1s3: f64,
    pub s2s3: f64,
}

impl Quadratic {
    pub fn from_array(a: [f64; 10]) -> Self {
        Quadratic {
            c: a[0],
            s1: a[1],
            s2: a[2],
            s3: a[3],
            s1s1: a[4],
            s2s2: a[5],
            s3s3: a[6],
            s1s2: a[7],
            s1s3: a[8],
            s2s3: a[9],
        }
    }

    pub fn to_array(self) -> [f64; 10] {
        [self.c, self.s1, self.s2, self.s3, self.s1s1, self.s2s2, self.s3s3, self.s1s2, self.s1s3, self.s2s3]
    }

    pub fn eval(&self, s: [f64; 3]) -> f64 {
        dot10(&self.to_array(), &monomials(s))
    }
}

fn monomials([a, b, c]: [f64; 3]) -> [f64; 10] {
    [1.0, a, b, c, a * a, b * b, c * c, a * b, a * c, b * c]
}

fn dot10(x: &[f64; 10], y: &[f64; 10]) -> f64 {
    x.iter().zip(y).map(|(x, y)| x * y).sum()
}

/// Provenance of a fitted constants file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    /// Node counts of the oracle used as the target, if it was the built-in one.
    pub oracle_nodes: Option<[usize; 3]>,
    pub training_points: usize,
    pub iterations: usize,
    /// Origin Hessian diagonal of the target.
    pub origin_hessian: f64,
    /// Largest `|approx − oracle| / max(0.05, 0.03·|oracle|)` on the training set.
    pub max_scaled_residual: f64,
    pub origin_gradient_residual: f64,
    pub origin_hessian_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxCoeffs {
    pub format: String,
    pub temperature: f64,
    pub f1: Quadratic,
    pub f2: Quadratic,
    pub metadata: FitMetadata,
}

impl ApproxCoeffs {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ApproxCoeffs = serde_json::from_str(text)?;
        if c.format != APPROX_COEFFS_FORMAT {
            return Err(Error::validation(format!("unknown constants format {:?}", c.format)));
        }
        let finite = c.f1.to_array().iter().chain(c.f2.to_array().iter()).all(|v| v.is_finite());
        if !finite || !(c.temperature.is_finite() && c.temperature > 0.0) {
            return Err(Error::validation("constants file holds non-finite or non-positive values"));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The constants compiled into the crate.
    pub fn frozen() -> Result<Self> {
        Self::from_json(APPROX_COEFFS_JSON)
    }

    pub(crate) fn shared_frozen() -> Arc<ApproxCoeffs> {
        static FROZEN: OnceLock<Arc<ApproxCoeffs>> = OnceLock::new();
        FROZEN
            .get_or_init(|| Arc::new(ApproxCoeffs::frozen().expect("embedded constants file is valid")))
            .clone()
    }

    /// Evaluates the approximation at any real triple.
    pub fn eval_raw(&self, s: [f64; 3]) -> f64 {
        model(self.temperature, &self.f1.to_array(), &self.f2.to_array(), s)
    }
}

fn smooth_max(tau: f64, s: [f64; 3]) -> f64 {
    let l = lambda1_raw(s).0;
    let top = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = l.iter().map(|v| ((v - top) / tau).exp()).sum();
    top + tau * (sum.ln() - 4f64.ln())
}

fn model(tau: f64, f1: &[f64; 10], f2: &[f64; 10], s: [f64; 3]) -> f64 {
    let m = smooth_max(tau, s);
    let x = monomials(s);
    let (p1, p2) = (dot10(f1, &x), dot10(f2, &x));
    m - p1 * (p2 * m).min(0.0).exp_m1()
}

pub fn log_norm_approx(s: &ConcentrationTriple, c: &ApproxCoeffs) -> f64 {
    c.eval_raw(s.values())
}

/// `∇_Λ log` of the Bingham integral as `(1 + Λ)/Σ(1 + Λᵢ)`. `None` when a
/// component falls outside `[0, 1]`.
pub fn lambda_space_grad_approx(lambda: &LambdaVec) -> Option<[f64; 4]> {
    let denom: f64 = lambda.0.iter().map(|l| 1.0 + l).sum();
    if !(denom > 0.0) {
        return None;
    }
    let g = lambda.0.map(|l| (1.0 + l) / denom);
    g.iter().all(|v| (0.0..=1.0).contains(v)).then_some(g)
}

/// Approximate `∂ log a / ∂(s1, s2, s3p)`.
///
/// The Λ-space formula is applied to `Λ₂`, which has the same derivatives as
/// `Λ₁` and nonnegative entries. Central differences of the closed form are
/// used whenever the formula leaves the simplex.
pub fn grad_log_norm_s(s: &ConcentrationTriple, c: &ApproxCoeffs) -> [f64; 3] {
    match lambda_space_grad_approx(&build_lambda2(s)) {
        Some(g) => lambda_grad_to_s(g),
        None => central_gradient(|x| c.eval_raw(x), s.values(), FD_STEP),
    }
}

fn central_gradient(f: impl Fn([f64; 3]) -> f64, s: [f64; 3], h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let (mut up, mut dn) = (s, s);
        up[i] += h;
        dn[i] -= h;
        g[i] = (f(up) - f(dn)) / (2.0 * h);
    }
    g
}

fn central_hessian(f: impl Fn([f64; 3]) -> f64, s: [f64; 3], h: f64) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    let f0 = f(s);
    for i in 0..3 {
        for j in i..3 {
            let v = if i == j {
                let (mut up, mut dn) = (s, s);
                up[i] += h;
                dn[i] -= h;
                (f(up) - 2.0 * f0 + f(dn)) / (h * h)
            } else {
                let at = |a: f64, b: f64| {
                    let mut x = s;
                    x[i] += a;
                    x[j] += b;
                    f(x)
                };
                (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h)
            };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Training triples: a lattice over the ordered cone with `s1 ≤ 32`, plus a
/// few far points along the diagonal and the `s1` axis for the asymptote.
fn training_set() -> Vec<[f64; 3]> {
    let s1s = [0.5, 1.0, 2.0, 3.0, 4.5, 6.0, 8.0, 10.0, 12.5, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0, 32.0];
    let r2 = [0.0, 0.15, 0.3, 0.5, 0.7, 0.85, 1.0];
    let r3 = [-1.0, -0.7, -0.4, -0.1, 0.1, 0.4, 0.7, 1.0];
    let mut pts = Vec::new();
    for &s1 in &s1s {
        for &a in &r2 {
            let s2 = a * s1;
            if s2 == 0.0 {
                pts.push([s1, 0.0, 0.0]);
                continue;
            }
            for &b in &r3 {
                pts.push([s1, s2, b * s2]);
            }
        }
    }
    for t in [40.0, 60.0, 80.0, 100.0] {
        pts.push([t, t, t]);
        pts.push([t, 0.0, 0.0]);
    }
    pts
}

struct Problem {
    points: Vec<[f64; 3]>,
    targets: Vec<f64>,
    scales: Vec<f64>,
    h: f64,
}

impl Problem {
    // p = [f1 without constant (9), f2 (10), ln τ]
    fn unpack(&self, p: &[f64]) -> (f64, [f64; 10], [f64; 10]) {
        let tau = p[19].exp();
        let mut f1 = [0.0; 10];
        let mut f2 = [0.0; 10];
        f1[1..].copy_from_slice(&p[..9]);
        f2.copy_from_slice(&p[9..19]);
        f1[0] = (1.0 - tau * self.h) / f2[0];
        (tau, f1, f2)
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let (tau, f1, f2) = self.unpack(p);
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .zip(&self.targets)
                .zip(&self.scales)
                .map(|((s, y), w)| (model(tau, &f1, &f2, *s) - y) / w),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (tau, f1, f2) = self.unpack(p);
        let mut jac = DMatrix::zeros(self.points.len(), 20);
        for (row, (s, w)) in self.points.iter().zip(&self.scales).enumerate() {
            let l = lambda1_raw(*s).0;
            let top = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e = l.map(|v| ((v - top) / tau).exp());
            let z: f64 = e.iter().sum();
            let m = top + tau * (z.ln() - 4f64.ln());
            let soft_mean: f64 = e.iter().zip(&l).map(|(e, l)| e * l).sum::<f64>() / z;
            let x = monomials(*s);
            let (p1, p2) = (dot10(&f1, &x), dot10(&f2, &x));
            let active = p2 * m < 0.0;
            let ex = if active { (p2 * m).exp() } else { 1.0 };
            let em1 = if active { (p2 * m).exp_m1() } else { 0.0 };
            // model = m − p1·em1
            for k in 1..10 {
                jac[(row, k - 1)] = -x[k] * em1 / w;
            }
            let dmodel_dp2 = if active { -p1 * ex * m } else { 0.0 };
            for k in 0..10 {
                jac[(row, 9 + k)] = dmodel_dp2 * x[k] / w;
            }
            // f1[0] depends on f2[0] and τ.
            jac[(row, 9)] += em1 * f1[0] / f2[0] / w;
            let dm_dlog_tau = m - soft_mean;
            let dmodel_dm = 1.0 - if active { p1 * ex * p2 } else { 0.0 };
            jac[(row, 19)] = (dmodel_dm * dm_dlog_tau + em1 * tau * self.h / f2[0]) / w;
        }
        jac
    }
}

impl Problem {
    /// For fixed `(f2, ln τ)` the model is linear in the free `f1`
    /// coefficients; solves for them and returns the full parameter vector
    /// with its residuals.
    fn project(&self, tail: &[f64]) -> (Vec<f64>, DVector<f64>) {
        let mut p = vec![0.0; 20];
        p[9..].copy_from_slice(tail);
        let (tau, f1, f2) = self.unpack(&p);
        let n = self.points.len();
        let mut a = DMatrix::zeros(n, 9);
        let mut b = DVector::zeros(n);
        for (row, ((s, y), w)) in self.points.iter().zip(&self.targets).zip(&self.scales).enumerate() {
            let m = smooth_max(tau, *s);
            let x = monomials(*s);
            let em1 = (dot10(&f2, &x) * m).min(0.0).exp_m1();
            for k in 1..10 {
                a[(row, k - 1)] = -x[k] * em1 / w;
            }
            b[row] = -(m - f1[0] * em1 - y) / w;
        }
        let c = match a.clone().svd(true, true).solve(&b, 1e-13) {
            Ok(c) => c,
            Err(_) => DVector::zeros(9),
        };
        p[..9].copy_from_slice(c.as_slice());
        let r = a * c - b;
        (p, r)
    }
}

fn forward_jacobian(f: &dyn Fn(&[f64]) -> DVector<f64>, p: &[f64], r: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(r.len(), p.len());
    for k in 0..p.len() {
        let step = 1e-7 * p[k].abs().max(1e-2);
        let mut q = p.to_vec();
        q[k] += step;
        jac.set_column(k, &((f(&q) - r) / step));
    }
    jac
}

struct LmOutcome {
    params: Vec<f64>,
    #[allow(dead_code)]
    cost: f64,
    iterations: usize,
}

/// Levenberg–Marquardt with column scaling; each damped step is the least
/// squares solution of `[J; √μ·I]·δ = [−r; 0]` by SVD.
fn levenberg_marquardt(
    residuals: &dyn Fn(&[f64]) -> DVector<f64>,
    jacobian: &dyn Fn(&[f64], &DVector<f64>) -> DMatrix<f64>,
    start: Vec<f64>,
    max_iter: usize,
) -> LmOutcome {
    let n = start.len();
    let mut p = start;
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut mu: f64 = 1e-3;
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut jac = jacobian(&p, &r);
        let scale: Vec<f64> = (0..n).map(|k| jac.column(k).norm().max(1e-12)).collect();
        for k in 0..n {
            jac.column_mut(k).unscale_mut(scale[k]);
        }
        let m = jac.nrows();
        let mut accepted = false;
        while mu < 1e14 {
            let mut aug = DMatrix::zeros(m + n, n);
            aug.view_mut((0, 0), (m, n)).copy_from(&jac);
            for k in 0..n {
                aug[(m + k, k)] = mu.sqrt();
            }
            let mut rhs = DVector::zeros(m + n);
            rhs.rows_mut(0, m).copy_from(&(-&r));
            let Ok(delta) = aug.svd(true, true).solve(&rhs, 1e-14) else {
                mu *= 4.0;
                continue;
            };
            let trial: Vec<f64> = (0..n).map(|k| p[k] + delta[k] / scale[k]).collect();
            let rt = residuals(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let gain = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                cost = ct;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                stalls = if gain < 1e-12 { stalls + 1 } else { 0 };
                break;
            }
            mu *= 2.0;
        }
        if !accepted || stalls >= 5 {
            break;
        }
    }
    LmOutcome { params: p, cost, iterations }
}

/// Fits the approximation against an arbitrary oracle `probe(s) = log a(s)`.
pub fn fit_approx_coeffs(probe: impl Fn([f64; 3]) -> f64) -> Result<ApproxCoeffs> {
    fit_inner(&probe, None)
}

/// Fits the approximation against the given quadrature oracle.
pub fn fit_approx_coeffs_with_oracle(oracle: &BinghamQuadrature) -> Result<ApproxCoeffs> {
    fit_inner(&|s| oracle.log_norm_raw(s), Some(oracle.spec().node_counts()))
}

fn fit_inner(probe: &dyn Fn([f64; 3]) -> f64, nodes: Option<[usize; 3]>) -> Result<ApproxCoeffs> {
    let target_hessian = central_hessian(probe, [0.0; 3], 1e-3);
    let target_gradient = central_gradient(probe, [0.0; 3], 1e-3);
    let h = (target_hessian[0][0] + target_hessian[1][1] + target_hessian[2][2]) / 3.0;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Fit(format!("oracle Hessian at the origin is not positive ({h})")));
    }

    // The closed form has zero gradient at the origin by construction.
    let slope = target_gradient.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if slope > GRADIENT_TOL {
        return Err(Error::Fit(format!("origin gradient residual {slope:.3e} exceeds {GRADIENT_TOL:.0e}")));
    }

    let points = training_set();
    let targets: Vec<f64> = points.iter().map(|s| probe(*s)).collect();
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("oracle returned a non-finite value".into()));
    }
    let scales = targets.iter().map(|y| (0.03 * y.abs()).max(0.05)).collect();
    let problem = Problem { points, targets, scales, h };

    let mut best: Option<(LmOutcome, f64)> = None;
    for (tau0, b0) in [1.0f64, 1.5, 2.0, 3.0].iter().flat_map(|t| [(*t, -0.5), (*t, -1.0)]) {
        let mut tail = vec![0.0; 11];
        tail[0] = b0;
        tail[10] = tau0.ln();
        let projected = |t: &[f64]| problem.project(t).1;
        let outer = levenberg_marquardt(&projected, &|t, r| forward_jacobian(&projected, t, r), tail, 500);
        let start = problem.project(&outer.params).0;
        let mut out = levenberg_marquardt(&|p| problem.residuals(p), &|p, _| problem.jacobian(p), start, 3000);
        out.iterations += outer.iterations;
        let worst = problem.residuals(&out.params).amax();
        if worst.is_finite() && best.as_ref().is_none_or(|(_, w)| worst < *w) {
            best = Some((out, worst));
        }
    }
    let (out, worst) = best.ok_or_else(|| Error::Fit("no start produced a finite fit".into()))?;
    let (tau, f1, f2) = problem.unpack(&out.params);

    let mut coeffs = ApproxCoeffs {
        format: APPROX_COEFFS_FORMAT.to_string(),
        temperature: tau,
        f1: Quadratic::from_array(f1),
        f2: Quadratic::from_array(f2),
        metadata: FitMetadata {
            oracle_nodes: nodes,
            training_points: problem.points.len(),
            iterations: out.iterations,
            origin_hessian: h,
            max_scaled_residual: worst,
            origin_gradient_residual: 0.0,
            origin_hessian_residual: 0.0,
        },
    };

    let g = central_gradient(|s| coeffs.eval_raw(s), [0.0; 3], 1e-3);
    let grad_res = g.iter().zip(&target_gradient).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let hs = central_hessian(|s| coeffs.eval_raw(s), [0.0; 3], 1e-3);
    let mut hess_res: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            hess_res = hess_res.max((hs[i][j] - target_hessian[i][j]).abs());
        }
    }
    if grad_res > GRADIENT_TOL {
        return Err(Error::Fit(format!("origin gradient residual {grad_res:.3e} exceeds {GRADIENT_TOL:.0e}")));
    }
    if hess_res > HESSIAN_TOL {
        return Err(Error::Fit(format!("origin Hessian residual {hess_res:.3e} exceeds {HESSIAN_TOL:.0e}")));
    }
    coeffs.metadata.origin_gradient_residual = grad_res;
    coeffs.metadata.origin_hessian_residual = hess_res;
    Ok(coeffs)
}
