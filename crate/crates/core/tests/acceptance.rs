//! End-to-end acceptance suite. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

use std::f64::consts::PI;
use std::time::Instant;

use matfisher::estimation::{fit_gradient_descent, fit_moment, run_experiment, GdConfig, Scenario};
use matfisher::loss::{self, check_convexity, check_hessian_bound, check_lipschitz};
use matfisher::metrics::{accuracy, evaluate, EvalSet, Prediction, PredictionRecord};
use matfisher::normalizer::{ApproxCoeffs, BinghamQuadrature, QuadratureSpec};
use matfisher::rotation::{axis_angle_to_rot, haar_sample, random_rotation};
use matfisher::viz::{axis_marginal, Axis, SphereGrid};
use matfisher::warp::{
    backproject_to_sphere, min_enclosing_cap, min_enclosing_cap_exhaustive, min_enclosing_cap_welzl, virtual_camera,
    BBox, CameraIntrinsics, DEFAULT_OUTPUT_SIZE,
};
use matfisher::{geodesic_distance, proper_svd, ConcentrationTriple, FisherParams, MatrixFisher, Normalizer, RotationMatrix};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Outcome { passed, detail }
    }
}

fn diag(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(a, b, c))
}

/// `U·diag(s)·Vᵀ` with Haar `U, V`, `s1 ∈ [1, s1_max]` and the remaining
/// proper singular values uniform in their admissible ranges.
fn random_f(rng: &mut ChaCha8Rng, s1_max: f64) -> Matrix3<f64> {
    let s1 = rng.random_range(1.0..s1_max);
    let s2 = rng.random_range(0.0..s1);
    let s3 = rng.random_range(-s2..=s2);
    let (u, v) = (random_rotation(rng), random_rotation(rng));
    u.matrix() * diag(s1, s2, s3) * v.matrix().transpose()
}

fn log_norm_of(f: &Matrix3<f64>, q: &BinghamQuadrature) -> f64 {
    q.log_norm(&ConcentrationTriple::from_svd(&proper_svd(f)))
}

fn normalizer_fidelity() -> Outcome {
    let coeffs = ApproxCoeffs::frozen().expect("frozen coefficients");
    let oracle = BinghamQuadrature::new(QuadratureSpec::default()).unwrap();
    let fine = BinghamQuadrature::new(QuadratureSpec::default().doubled()).unwrap();
    let mut worst_ratio = 0.0f64;
    let mut worst_at = [0.0; 3];
    let mut convergence = 0.0f64;
    let mut k = 0;
    for i in 0..10 {
        let s1 = 3.0 * (i + 1) as f64;
        for j in 0..10 {
            let s2 = s1 * j as f64 / 9.0;
            for l in 0..10 {
                let s3 = s2 * (2.0 * l as f64 / 9.0 - 1.0);
                let s = ConcentrationTriple::new(s1, s2, s3).unwrap();
                let exact = oracle.log_norm(&s);
                let approx = matfisher::normalizer::log_norm_approx(&s, &coeffs);
                let ratio = (approx - exact).abs() / (0.03 * exact.abs()).max(0.05);
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst_at = [s1, s2, s3];
                }
                if k % 10 == 0 {
                    convergence = convergence.max((fine.log_norm(&s) - exact).abs());
                }
                k += 1;
            }
        }
    }
    Outcome::new(
        worst_ratio <= 1.0 && convergence < 1e-8,
        format!(
            "{k} points, worst |err|/tol {worst_ratio:.3} at {worst_at:.2?}, node doubling changes log a by {convergence:.1e}"
        ),
    )
}

fn gradient_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = BinghamQuadrature::new(QuadratureSpec::default()).unwrap();
    let h = 1e-4;
    let (mut fd_worst, mut mc_worst) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let f = random_f(&mut rng, 25.0);
        let d = MatrixFisher::from_matrix(f).unwrap();
        let grad = d.mean_rotation_matrix();
        let mut fd = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let mut e = Matrix3::zeros();
                e[(r, c)] = h;
                fd[(r, c)] = (log_norm_of(&(f + e), &q) - log_norm_of(&(f - e), &q)) / (2.0 * h);
            }
        }
        fd_worst = fd_worst.max((fd - grad).amax() / grad.amax());
        let samples = d.sample(1_000_000, 100 + trial).unwrap();
        let mean = samples.iter().fold(Matrix3::zeros(), |acc, r| acc + r.matrix()) / samples.len() as f64;
        mc_worst = mc_worst.max((mean - grad).amax());
    }
    Outcome::new(
        fd_worst <= 1e-3 && mc_worst <= 0.01,
        format!("20 F: finite-difference relative error {fd_worst:.1e}, Monte Carlo entrywise error {mc_worst:.4}"),
    )
}

fn loss_properties() -> Outcome {
    let n = Normalizer::oracle();
    let lip = check_lipschitz(10_000, 50.0, 31, &n).unwrap().lipschitz.unwrap();
    let cvx = check_convexity(10_000, 50.0, 32, &n).unwrap().convexity.unwrap();
    let hes = check_hessian_bound(10_000, 50.0, 33, &n).unwrap().hessian.unwrap();
    Outcome::new(
        lip.passed && cvx.passed && hes.passed,
        format!(
            "max grad norm {:.4} (bound {}, tighter {:.4}: {}), max convexity violation {:.1e}, \
             Hessian forms in [{:.2e}, {:.4}] (bound {}, tighter {}: {})",
            lip.max_grad_norm,
            loss::LIPSCHITZ_BOUND,
            loss::LIPSCHITZ_TIGHT,
            if lip.within_tight_bound { "within" } else { "exceeded" },
            cvx.max_violation,
            hes.min_quadratic_form,
            hes.max_quadratic_form,
            loss::HESSIAN_BOUND,
            loss::HESSIAN_TIGHT,
            if hes.within_tight_bound { "within" } else { "exceeded" },
        ),
    )
}

fn mode_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let haar = haar_sample(44, 100_000).unwrap();
    let mut min_margin = f64::INFINITY;
    for _ in 0..20 {
        let d = MatrixFisher::from_matrix(random_f(&mut rng, 30.0)).unwrap();
        let peak = d.log_pdf(&d.mode().rotation);
        for r in &haar {
            min_margin = min_margin.min(peak - d.log_pdf(r));
        }
    }
    let iso = MatrixFisher::from_matrix(diag(5.0, 5.0, 5.0)).unwrap().mode();
    let iso_err = (iso.rotation.matrix() - Matrix3::identity()).amax();
    let a = random_rotation(&mut rng);
    let m = MatrixFisher::from_matrix(a.matrix() * diag(25.0, 5.0, 1.0)).unwrap().mode();
    let a_err = (m.rotation.matrix() - a.matrix()).amax();
    Outcome::new(
        min_margin >= 0.0 && iso_err == 0.0 && !iso.degenerate && a_err <= 1e-9,
        format!(
            "min log-density margin over 20x10^5 Haar draws {min_margin:.3e}; diag(5,5,5) mode off identity by {iso_err:.1e}; \
             A·diag(25,5,1) mode off A by {a_err:.1e}"
        ),
    )
}

fn sampler_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let proposals = 10_000_000u64;
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let d = MatrixFisher::from_matrix(random_f(&mut rng, 25.0)).unwrap();
        let p = d.expected_acceptance();
        let stats = d.count_acceptances(proposals, 500 + trial).unwrap();
        let se = (p * (1.0 - p) / proposals as f64).sqrt();
        worst = worst.max((stats.acceptance_rate() - p).abs() / se);
    }
    Outcome::new(worst <= 3.0, format!("10 F at 10^7 proposals each: worst deviation {worst:.2} standard errors"))
}

fn estimation() -> Outcome {
    let truth = MatrixFisher::from_matrix(diag(20.0, 20.0, 20.0)).unwrap();
    let samples = truth.sample(10_000, 6).unwrap();
    let moment = fit_moment(&samples).unwrap();
    let cfg = GdConfig { learning_rate: 0.2, record_history: true, ..Default::default() };
    let gd = fit_gradient_descent(&samples, &cfg).unwrap();
    let id = RotationMatrix::identity();
    let err_m = geodesic_distance(&moment.mode, &id).to_degrees();
    let err_g = geodesic_distance(&gd.mode, &id).to_degrees();
    let gap = (moment.params.matrix() - gd.params.matrix()).norm();
    // Near the optimum each step lowers the loss by less than the rounding
    // noise of evaluating log a, so increases are compared against that noise.
    let rise = gd.loss_history.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let noise = 1e-12 * gd.final_loss.abs().max(1.0);
    let monotone = rise <= noise;
    Outcome::new(
        err_m < 2.0 && err_g < 2.0 && gap <= 1e-3 && monotone && gd.converged,
        format!(
            "mode error moment {err_m:.3}°, descent {err_g:.3}°; ‖F_moment − F_descent‖ {gap:.1e}; \
             {} descent steps, loss monotone: {monotone} (largest step-to-step rise {rise:.1e}); fitted s {:.3?}",
            gd.iterations, moment.singular_values
        ),
    )
}

fn symmetric_class() -> Outcome {
    let report = run_experiment(&Scenario::two_mode(20.0, 2_000), 7).unwrap();
    let t = report.two_mode.unwrap();
    Outcome::new(
        t.u_shaped && t.plane_ratio < 0.1 && t.marginal_spread < 0.25,
        format!(
            "histogram {:?} (U-shaped: {}), in-plane/axis concentration ratio {:.3}, equatorial marginal spread {:.3}",
            t.histogram, t.u_shaped, t.plane_ratio, t.marginal_spread
        ),
    )
}

fn record(class: &str, gt: RotationMatrix, pred: Prediction) -> PredictionRecord {
    PredictionRecord { class: class.to_string(), ground_truth: gt, prediction: pred, flags: Vec::new() }
}

fn about_z(deg: f64) -> RotationMatrix {
    axis_angle_to_rot(&Vector3::z(), deg.to_radians()).unwrap()
}

fn metrics() -> Outcome {
    let id = RotationMatrix::identity();
    let mut fails = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let exact: Vec<_> = (0..5)
        .map(|_| {
            let r = random_rotation(&mut rng);
            record("a", r, Prediction::Rotation(r))
        })
        .collect();
    let s = evaluate(&EvalSet::new(exact), &[PI / 6.0]).unwrap();
    if s.overall.median_deg.unwrap() > 1e-12 || s.overall.acc != vec![1.0] {
        fails.push("all-correct");
    }

    let three: Vec<_> = [10.0, 20.0, 40.0].iter().map(|&d| record("a", id, Prediction::Rotation(about_z(d)))).collect();
    let s = evaluate(&EvalSet::new(three), &[PI / 6.0]).unwrap();
    if (s.overall.median_deg.unwrap() - 20.0).abs() > 1e-12 || (s.overall.acc[0] - 2.0 / 3.0).abs() > 1e-15 {
        fails.push("10/20/40 degrees");
    }

    let mut two = vec![record("a", id, Prediction::Rotation(about_z(5.0)))];
    two.push(record("b", id, Prediction::Rotation(about_z(5.0))));
    two.push(record("b", id, Prediction::Rotation(about_z(90.0))));
    let s = evaluate(&EvalSet::new(two), &[PI / 6.0]).unwrap();
    if s.overall.acc != vec![0.75] {
        fails.push("class averaging");
    }

    let errors: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..180.0)).collect();
    let accs: Vec<f64> = (0..=180).map(|y| accuracy(&errors, y as f64)).collect();
    if !accs.windows(2).all(|w| w[0] <= w[1]) {
        fails.push("monotone");
    }

    let mut set = Vec::new();
    for k in 0..200 {
        let gt = random_rotation(&mut rng);
        let pred = if k % 2 == 0 {
            Prediction::Rotation(random_rotation(&mut rng))
        } else {
            Prediction::Params(FisherParams::new(random_f(&mut rng, 20.0)).unwrap())
        };
        set.push(record(if k % 3 == 0 { "x" } else { "y" }, gt, pred));
    }
    let g = random_rotation(&mut rng);
    let moved: Vec<_> = set
        .iter()
        .map(|r| {
            let gt = RotationMatrix::new_unchecked(g.matrix() * r.ground_truth.matrix());
            let pred = match &r.prediction {
                Prediction::Rotation(p) => Prediction::Rotation(RotationMatrix::new_unchecked(g.matrix() * p.matrix())),
                Prediction::Params(f) => Prediction::Params(FisherParams::new(g.matrix() * f.matrix()).unwrap()),
            };
            record(&r.class, gt, pred)
        })
        .collect();
    let invariance = set.iter().zip(&moved).map(|(a, b)| (a.error_deg() - b.error_deg()).abs().to_radians()).fold(0.0, f64::max);
    if invariance > 1e-12 {
        fails.push("coordinate invariance");
    }

    Outcome::new(
        fails.is_empty(),
        if fails.is_empty() {
            format!("hand cases reproduced, accuracy monotone over 181 thresholds, invariance gap {invariance:.1e} rad")
        } else {
            format!("failed: {}", fails.join(", "))
        },
    )
}

fn warp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = CameraIntrinsics::new(500.0, 520.0, 320.0, 240.0).unwrap();
    let s = DEFAULT_OUTPUT_SIZE;
    let half = s as f64 / 2.0;
    let (mut center_err, mut not_ejected, mut outside) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let (x0, y0) = (rng.random_range(0.0..600.0), rng.random_range(0.0..440.0));
        let b = BBox::new(x0, y0, x0 + rng.random_range(4.0..300.0), y0 + rng.random_range(4.0..300.0)).unwrap();
        let w = virtual_camera(&b, &k, s).unwrap();
        let c = w.virtual_intrinsics.project(&w.cam_rotation.apply(&w.cap_center));
        center_err = center_err.max((c[0] - half).abs().max((c[1] - half).abs()));
        let mut scaled = w.virtual_intrinsics;
        scaled.fx *= 1.01;
        scaled.fy *= 1.01;
        let mut ejected = false;
        for corner in b.corners() {
            let v = w.cam_rotation.apply(&backproject_to_sphere(corner, &k));
            if w.virtual_intrinsics.project(&v).iter().any(|x| !(-1e-9..=s as f64 + 1e-9).contains(x)) {
                outside += 1;
            }
            ejected |= scaled.project(&v).iter().any(|x| !(0.0..=s as f64).contains(x));
        }
        not_ejected += usize::from(!ejected);
    }

    let mut cap_err = 0.0f64;
    for trial in 0..200 {
        let n = 2 + trial % 11;
        let spread = rng.random_range(0.05..1.2);
        let axis = random_rotation(&mut rng);
        let points: Vec<_> = (0..n)
            .map(|_| axis.apply(&Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), 1.0).normalize()))
            .collect();
        let brute = min_enclosing_cap_exhaustive(&points).unwrap();
        let welzl = min_enclosing_cap_welzl(&points).unwrap();
        let (center, radius) = min_enclosing_cap(&points).unwrap();
        cap_err = cap_err
            .max((welzl.radius - brute.radius).abs())
            .max((welzl.center - brute.center).amax())
            .max((radius - brute.radius).abs())
            .max((center - brute.center).amax());
    }
    Outcome::new(
        center_err <= 1e-6 && not_ejected == 0 && outside == 0 && cap_err <= 1e-8,
        format!(
            "10^3 boxes: cap center off by {center_err:.1e} px, {outside} corners outside, {not_ejected} boxes kept all corners at 1.01x; \
             cap vs brute force {cap_err:.1e} over 200 point sets"
        ),
    )
}

/// Pearson statistic of `counts` against `n·expected`, pooling cells whose
/// expected count is below five. Returns the statistic and degrees of freedom.
fn chi_square(counts: &[u64], expected: &[f64], n: f64) -> (f64, usize) {
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in counts.iter().zip(expected) {
        let e = n * p;
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        cells += 1;
    }
    (stat, cells - 1)
}

/// Cell probabilities of a coarse grid by summing the fine grid over blocks.
fn coarse_probabilities(fine: &SphereGrid, factor: usize) -> Vec<f64> {
    let (h, w) = (fine.height / factor, fine.width / factor);
    let mut out = vec![0.0; h * w];
    for row in 0..fine.height {
        for col in 0..fine.width {
            out[(row / factor) * w + col / factor] += fine.get(row, col) * fine.cell_area(row);
        }
    }
    out
}

fn visualization() -> Outcome {
    let (h, w) = (128, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cases = [diag(5.0, 5.0, 5.0), diag(20.0, 10.0, -2.0), random_f(&mut rng, 15.0), Matrix3::zeros()];
    let mut integral_err = 0.0f64;
    for f in &cases {
        let d = MatrixFisher::from_matrix(*f).unwrap();
        for axis in Axis::ALL {
            integral_err = integral_err.max((axis_marginal(&d, axis, h, w).unwrap().integral() - 1.0).abs());
        }
    }

    let u = random_rotation(&mut rng);
    let f = u.matrix() * diag(6.0, 3.0, 1.0);
    let d = MatrixFisher::from_matrix(f).unwrap();
    let n = 1_000_000;
    let samples = d.sample(n, 1010).unwrap();
    let probe = SphereGrid::new(16, 32).unwrap();
    let mut worst_p = 1.0f64;
    let mut worst = String::new();
    for axis in Axis::ALL {
        let expected = coarse_probabilities(&axis_marginal(&d, axis, h, w).unwrap(), 8);
        let mut counts = vec![0u64; expected.len()];
        for r in &samples {
            let x = r.matrix().column(axis.index()).into_owned();
            let (row, col) = probe.cell_of(&x);
            counts[row * probe.width + col] += 1;
        }
        let (stat, dof) = chi_square(&counts, &expected, n as f64);
        let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
        if p < worst_p {
            worst_p = p;
            worst = format!("axis {}: chi2 {stat:.1} on {dof} dof", axis.index() + 1);
        }
    }

    let peak_grid = axis_marginal(&MatrixFisher::from_matrix(diag(5.0, 5.0, 5.0)).unwrap(), Axis::X, h, w).unwrap();
    let (row, col) = peak_grid.argmax();
    let peak_angle = peak_grid.direction(row, col).angle(&Vector3::x()).to_degrees();
    let cell_deg = 360.0 / w as f64;
    Outcome::new(
        integral_err <= 1e-2 && worst_p >= 0.01 && peak_angle <= cell_deg,
        format!(
            "max |integral − 1| {integral_err:.1e}; 10^6 samples, worst {worst}, p = {worst_p:.3}; \
             diag(5,5,5) axis-1 peak {peak_angle:.2}° from +e1"
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 10] = [
        ("normalizer fidelity", normalizer_fidelity),
        ("gradient identity", gradient_identity),
        ("loss properties", loss_properties),
        ("mode correctness", mode_correctness),
        ("sampler/normalizer cross-check", sampler_cross_check),
        ("estimation", estimation),
        ("symmetric-class behavior", symmetric_class),
        ("metrics", metrics),
        ("warp", warp),
        ("visualization", visualization),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let status = if out.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!out.passed);
        println!("{status} {:>2} {name} ({:.1}s): {}", i + 1, start.elapsed().as_secs_f64(), out.detail);
    }
    println!("{} of {} acceptance criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
