use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use matfisher::estimation::{
    fit_gradient_descent_with, fit_moment, run_experiment, ExperimentReport, FitResult, GdConfig, Scenario,
};
use matfisher::io::{parse_rotation, parse_rotations, read_pnm, rotations_to_json, write_pnm, write_ppm, Raster, RotationLabel};
use matfisher::loss::{check_convexity, check_hessian_bound, check_lipschitz, PropertyReport};
use matfisher::metrics::{error_histogram, evaluate, EvalSet, EvalSummary, DEFAULT_THRESHOLDS};
use matfisher::normalizer::{log_norm_approx, ApproxCoeffs};
use matfisher::rotation::rot_to_quat;
use matfisher::viz::{axis_marginal, compact_vis, render_heatmap, Axis, HeatmapScale, SphereGrid};
use matfisher::warp::{adjust_rotation_label, virtual_camera, warp_image, BBox, CameraIntrinsics};
use matfisher::{ConcentrationTriple, Error, MatrixFisher, Normalizer, Result};
use serde::Serialize;
use serde_json::json;

use crate::{Cli, Command, FitMethodArg, NormalizerChoice, PropertyArg, ScaleArg};

pub enum Outcome {
    Success,
    PropertyFailure(String),
}

fn normalizer(choice: NormalizerChoice) -> Normalizer {
    match choice {
        NormalizerChoice::Oracle => Normalizer::oracle(),
        NormalizerChoice::Approx => Normalizer::approx(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// JSON to `--out` or stdout; with `--pretty` the table goes to stdout instead.
fn emit<T: Serialize>(cli: &Cli, value: &T, table: impl FnOnce() -> String) -> Result<()> {
    let text = serde_json::to_string(value)?;
    if let Some(path) = &cli.out {
        std::fs::write(path, format!("{text}\n"))?;
    }
    if cli.pretty {
        print!("{}", table());
    } else if cli.out.is_none() {
        println!("{text}");
    }
    Ok(())
}

fn note(cli: &Cli, msg: &str) {
    if !cli.quiet {
        eprintln!("matfisher: {msg}");
    }
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).map(|s| s + "\n").unwrap_or_default()
}

fn matrix_rows(v: &[f64; 9]) -> String {
    v.chunks(3).map(|r| format!("  {:>12.6} {:>12.6} {:>12.6}\n", r[0], r[1], r[2])).collect()
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Mode { f } => {
            let d = MatrixFisher::new(*f);
            let m = d.mode();
            let r = m.rotation.to_row_major();
            let out = json!({ "R": r, "degenerate": m.degenerate, "singular_values": d.svd().singular_values() });
            emit(cli, &out, || format!("mode{}\n{}", if m.degenerate { " (not unique)" } else { "" }, matrix_rows(&r)))?;
        }
        Command::Logc { s } => {
            let t = ConcentrationTriple::new(s[0], s[1], s[2])?;
            let oracle = Normalizer::oracle().log_norm(&t);
            let approx = log_norm_approx(&t, &ApproxCoeffs::frozen()?);
            let abs_err = (oracle - approx).abs();
            let out = json!({ "s": s, "oracle": oracle, "approx": approx, "abs_err": abs_err });
            emit(cli, &out, || format!("oracle   {oracle:.12}\napprox   {approx:.12}\nabs_err  {abs_err:.3e}\n"))?;
        }
        Command::Sample { f, n, quaternions } => {
            let (samples, stats) = MatrixFisher::new(*f).sample_with_stats(*n, cli.seed)?;
            note(cli, &format!("{} proposals, acceptance {:.4e}", stats.proposals, stats.acceptance_rate()));
            let text = if *quaternions {
                let q: Vec<[f64; 4]> = samples.iter().map(|r| rot_to_quat(r).to_array()).collect();
                serde_json::to_string(&q)?
            } else {
                rotations_to_json(&samples)?
            };
            match &cli.out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Command::Fit { input, method, lr, decay_at, decay_factor, max_iter, grad_tol, overscale, history, normalizer: nc } => {
            let samples = parse_rotations(&read_text(input)?)?;
            let fit: FitResult = match method {
                FitMethodArg::Moment => fit_moment(&samples)?,
                FitMethodArg::Gd => {
                    let mut cfg = GdConfig::default();
                    if let Some(v) = lr {
                        cfg.learning_rate = *v;
                    }
                    if !decay_at.is_empty() {
                        cfg.decay_at = decay_at.clone();
                    }
                    if let Some(v) = decay_factor {
                        cfg.decay_factor = *v;
                    }
                    if let Some(v) = max_iter {
                        cfg.max_iterations = *v;
                    }
                    if let Some(v) = grad_tol {
                        cfg.grad_tol = *v;
                    }
                    if let Some(v) = overscale {
                        cfg.overscale = *v;
                    }
                    cfg.record_history = *history;
                    fit_gradient_descent_with(&samples, &cfg, &normalizer(*nc))?
                }
            };
            if !fit.converged {
                note(cli, &format!("stopped after {} iterations without converging", fit.iterations));
            }
            emit(cli, &fit, || {
                let mut t = format!(
                    "iterations {}\nconverged  {}\nloss       {:.9}\ngrad norm  {:.3e}\ns          {:?}\nF\n",
                    fit.iterations, fit.converged, fit.final_loss, fit.gradient_norm, fit.singular_values
                );
                t.push_str(&matrix_rows(&fit.params.to_row_major()));
                t
            })?;
        }
        Command::Experiment { scenario, out_dir } => {
            let s: Scenario =
                serde_json::from_str(&read_text(scenario)?).map_err(|e| Error::Validation(format!("scenario: {e}")))?;
            let report = run_experiment(&s, cli.seed)?;
            if let Some(dir) = out_dir {
                write_experiment_grids(dir, &report)?;
            }
            if !report.loss_monotone {
                note(cli, "loss sequence is not monotone");
            }
            emit(cli, &report, || experiment_table(&report))?;
        }
        Command::LossCheck { n, radius, check, normalizer: nc } => {
            let norm = normalizer(*nc);
            let mut report = PropertyReport::new(&norm);
            if matches!(check, PropertyArg::Lipschitz | PropertyArg::All) {
                report = report.merge(check_lipschitz(*n, *radius, cli.seed, &norm)?);
            }
            if matches!(check, PropertyArg::Convexity | PropertyArg::All) {
                report = report.merge(check_convexity(*n, *radius, cli.seed.wrapping_add(1), &norm)?);
            }
            if matches!(check, PropertyArg::Hessian | PropertyArg::All) {
                report = report.merge(check_hessian_bound(*n, *radius, cli.seed.wrapping_add(2), &norm)?);
            }
            emit(cli, &report, || loss_table(&report))?;
            if !report.passed() {
                return Ok(Outcome::PropertyFailure("a loss bound was violated".into()));
            }
        }
        Command::Eval { input, thresholds, histogram_class, bins } => {
            let set = EvalSet::from_jsonl(&read_text(input)?)?;
            let thresholds = if thresholds.is_empty() { DEFAULT_THRESHOLDS.to_vec() } else { thresholds.clone() };
            let summary = evaluate(&set, &thresholds)?;
            for w in &summary.warnings {
                note(cli, w);
            }
            let histogram = match histogram_class {
                Some(c) => Some(json!({ "class": c, "bins": bins, "counts": error_histogram(&set, c, *bins)? })),
                None => None,
            };
            #[derive(Serialize)]
            struct EvalOutput<'a> {
                #[serde(flatten)]
                summary: &'a EvalSummary,
                #[serde(skip_serializing_if = "Option::is_none")]
                histogram: Option<serde_json::Value>,
            }
            let out = EvalOutput { summary: &summary, histogram };
            emit(cli, &out, || eval_table(&summary))?;
        }
        Command::Warp { image, bbox, intrinsics, size, image_out, label_in, label_out } => {
            let b = BBox::new(bbox[0], bbox[1], bbox[2], bbox[3])?;
            let k = CameraIntrinsics::new(intrinsics[0], intrinsics[1], intrinsics[2], intrinsics[3])?;
            let w = virtual_camera(&b, &k, *size)?;
            match (image, image_out) {
                (Some(src), Some(dst)) => {
                    let warped = match read_pnm(src)? {
                        Raster::Gray(g) => Raster::Gray(warp_image(&g, &w)?),
                        Raster::Rgb(c) => Raster::Rgb(warp_image(&c, &w)?),
                    };
                    write_pnm(dst, &warped)?;
                }
                (None, Some(_)) => return Err(Error::Validation("--image-out needs --image".into())),
                (Some(_), None) => note(cli, "no --image-out given; the image is not warped"),
                (None, None) => {}
            }
            let label = match label_in {
                Some(p) => Some(adjust_rotation_label(&parse_rotation(&read_text(p)?)?, &w)),
                None => None,
            };
            match (label, label_out) {
                (Some(r), Some(p)) => std::fs::write(p, serde_json::to_string(&RotationLabel { r })? + "\n")?,
                (None, Some(_)) => return Err(Error::Validation("--label-out needs --label-in".into())),
                _ => {}
            }
            let out = json!({
                "homography": w.homography.transpose().as_slice(),
                "virtual_intrinsics": w.virtual_intrinsics,
                "cam_rotation": w.cam_rotation,
                "output_size": w.output_size,
                "cap_center": [w.cap_center.x, w.cap_center.y, w.cap_center.z],
                "cap_radius": w.cap_radius,
                "label": label.map(|r| r.to_row_major()),
            });
            emit(cli, &out, || pretty_json(&out))?;
        }
        Command::Viz { f, axis, dims, scale } => {
            let prefix = cli.out.clone().ok_or_else(|| Error::Validation("viz needs --out <prefix>".into()))?;
            let d = MatrixFisher::new(*f);
            let mut grids: Vec<(String, SphereGrid)> = Vec::new();
            let axes: Vec<Axis> = match axis.as_str() {
                "all" => Axis::ALL.to_vec(),
                "compact" => Vec::new(),
                n => vec![Axis::from_number(n.parse().map_err(|_| Error::Validation(format!("unknown axis {n:?}")))?)?],
            };
            for a in &axes {
                grids.push((format!("axis{}", a.index() + 1), axis_marginal(&d, *a, dims[0], dims[1])?));
            }
            if axis == "compact" {
                grids.push(("compact".into(), compact_vis(&d, dims[0], dims[1])?));
            }
            let scale = match scale {
                ScaleArg::Shared => HeatmapScale::Shared,
                ScaleArg::Independent => HeatmapScale::Independent,
            };
            let only: Vec<SphereGrid> = grids.iter().map(|g| g.1.clone()).collect();
            let images = render_heatmap(&only, scale);
            let mut entries = Vec::new();
            for ((name, g), img) in grids.iter().zip(&images) {
                let base = with_suffix(&prefix, &format!("_{name}"));
                let (csv, js, ppm) = (base.with_extension("csv"), base.with_extension("json"), base.with_extension("ppm"));
                std::fs::write(&csv, g.to_csv())?;
                std::fs::write(&js, serde_json::to_string(&grid_json(g))? + "\n")?;
                write_ppm(&ppm, img)?;
                entries.push(json!({
                    "name": name,
                    "max": g.max(),
                    "integral": g.integral(),
                    "files": [csv, js, ppm],
                }));
            }
            let out = json!({ "height": dims[0], "width": dims[1], "grids": entries });
            if cli.pretty {
                print!("{}", pretty_json(&out));
            } else {
                println!("{}", serde_json::to_string(&out)?);
            }
        }
    }
    Ok(Outcome::Success)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    // A placeholder extension so that `with_extension` never eats part of the prefix.
    s.push(".x");
    PathBuf::from(s)
}

fn grid_json(g: &SphereGrid) -> serde_json::Value {
    json!({
        "height": g.height,
        "width": g.width,
        "convention": "row-major; row = polar angle from +e3 at cell centers, column = azimuth from -pi at cell centers",
        "values": g.values,
    })
}

fn write_experiment_grids(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for g in &report.grids {
        let images = render_heatmap(&g.marginals, HeatmapScale::Shared);
        for (i, (m, img)) in g.marginals.iter().zip(&images).enumerate() {
            let stem = format!("iter{:07}_axis{}", g.iteration, i + 1);
            std::fs::write(dir.join(format!("{stem}.csv")), m.to_csv())?;
            write_ppm(&dir.join(format!("{stem}.ppm")), img)?;
        }
    }
    let mut loss = String::from("iteration,loss,mode_error_deg\n");
    for (k, err) in report.mode_error_deg.iter().enumerate() {
        let value = k.checked_sub(1).and_then(|j| report.fit.loss_history.get(j));
        let value = value.map_or(String::new(), |v| format!("{v:e}"));
        let _ = writeln!(loss, "{k},{value},{err:e}");
    }
    std::fs::write(dir.join("trace.csv"), loss)?;
    Ok(())
}

fn experiment_table(r: &ExperimentReport) -> String {
    let mut t = format!(
        "iterations     {}\nconverged      {}\nfinal loss     {:.9}\nloss monotone  {}\ns              {:?}\n",
        r.fit.iterations, r.fit.converged, r.fit.final_loss, r.loss_monotone, r.fit.singular_values
    );
    if let Some(u) = &r.unimodal {
        let _ = writeln!(t, "mode error     {:.4} deg\nF error        {:.4e}", u.mode_error_deg, u.frobenius_error);
    }
    if let Some(m) = &r.two_mode {
        let _ = writeln!(
            t,
            "plane ratio    {:.4}\naxis error     {:.4} deg\nspread         {:.4}\nhistogram      {:?}\nU-shaped       {}",
            m.plane_ratio, m.axis_error_deg, m.marginal_spread, m.histogram, m.u_shaped
        );
    }
    t
}

fn loss_table(r: &PropertyReport) -> String {
    let mut t = format!("normalizer {}\n", r.normalizer);
    let mark = |p: bool| if p { "pass" } else { "FAIL" };
    if let Some(s) = &r.lipschitz {
        let _ = writeln!(t, "gradient norm   max {:.6} bound {} (tight {:.6}: {})  {}", s.max_grad_norm, s.bound, s.tight_bound, s.within_tight_bound, mark(s.passed));
    }
    if let Some(s) = &r.convexity {
        let _ = writeln!(t, "jensen gap      max {:.3e} tol {:.0e}  {}", s.max_violation, s.tolerance, mark(s.passed));
    }
    if let Some(s) = &r.hessian {
        let _ = writeln!(t, "hessian form    max {:.6} bound {} (tight {}: {})  {}", s.max_quadratic_form, s.bound, s.tight_bound, s.within_tight_bound, mark(s.passed));
    }
    t
}

fn eval_table(s: &EvalSummary) -> String {
    let mut t = format!("{:<16}{:>6}{:>10}{:>10}", "class", "n", "median", "mean");
    for y in &s.thresholds_deg {
        let _ = write!(t, "{:>10}", format!("acc@{y:.1}"));
    }
    t.push('\n');
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    for c in &s.classes {
        let _ = write!(t, "{:<16}{:>6}{:>10}{:>10}", c.class, c.count, fmt(c.median_deg), fmt(c.mean_deg));
        for a in &c.acc {
            let _ = write!(t, "{a:>10.4}");
        }
        t.push('\n');
    }
    let _ = write!(t, "{:<16}{:>6}{:>10}{:>10}", "overall", s.overall.classes, fmt(s.overall.median_deg), fmt(s.overall.mean_deg));
    for a in &s.overall.acc {
        let _ = write!(t, "{a:>10.4}");
    }
    t.push('\n');
    t
}
