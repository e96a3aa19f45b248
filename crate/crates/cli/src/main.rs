mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use matfisher::FisherParams;
use sha2::{Digest, Sha256};

/// Matrix Fisher distribution tools. Results are JSON on stdout or in the
/// `--out` file.
#[derive(Debug, Parser)]
#[command(name = "matfisher")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress diagnostics other than errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Output file; a file-name prefix for `viz`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print a table instead of JSON on stdout.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalizerChoice {
    Oracle,
    Approx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitMethodArg {
    Moment,
    Gd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PropertyArg {
    Lipschitz,
    Convexity,
    Hessian,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Shared,
    Independent,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mode of a distribution.
    Mode {
        /// Nine row-major entries or a distribution file.
        #[arg(long = "F", value_parser = args::fisher_arg)]
        f: FisherParams,
    },
    /// Log normalizing constant of a proper singular value triple.
    Logc {
        /// s1,s2,s3p
        #[arg(long, value_parser = args::fixed_floats::<3>)]
        s: [f64; 3],
    },
    /// Exact rejection samples.
    Sample {
        #[arg(long = "F", value_parser = args::fisher_arg)]
        f: FisherParams,
        #[arg(long)]
        n: usize,
        /// Write [w,x,y,z] quaternions instead of matrices.
        #[arg(long)]
        quaternions: bool,
    },
    /// Fit a distribution to a rotation file.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FitMethodArg::Moment)]
        method: FitMethodArg,
        #[arg(long)]
        lr: Option<f64>,
        /// Comma-separated iterations at which the rate decays.
        #[arg(long, value_delimiter = ',')]
        decay_at: Vec<usize>,
        #[arg(long)]
        decay_factor: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        grad_tol: Option<f64>,
        #[arg(long)]
        overscale: Option<f64>,
        /// Include the per-step loss.
        #[arg(long)]
        history: bool,
        #[arg(long, value_enum, default_value_t = NormalizerChoice::Oracle)]
        normalizer: NormalizerChoice,
    },
    /// Synthetic fitting run from a scenario file.
    Experiment {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for marginal-grid CSV and heatmap files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Executable checks of the loss bounds.
    LossCheck {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Frobenius radius of the parameter ball.
        #[arg(long, default_value_t = 50.0)]
        radius: f64,
        #[arg(long, value_enum, default_value_t = PropertyArg::All)]
        check: PropertyArg,
        #[arg(long, value_enum, default_value_t = NormalizerChoice::Oracle)]
        normalizer: NormalizerChoice,
    },
    /// Pose metrics of a JSON-lines prediction file.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated angles: radians, pi/k or Ndeg.
        #[arg(long, value_parser = args::angle, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Also report the error histogram of this class.
        #[arg(long)]
        histogram_class: Option<String>,
        #[arg(long, default_value_t = 6)]
        bins: usize,
    },
    /// Virtual-camera warp of an image and its rotation label.
    Warp {
        /// PPM or PGM input.
        #[arg(long)]
        image: Option<PathBuf>,
        /// x_min,y_min,x_max,y_max
        #[arg(long, value_parser = args::fixed_floats::<4>)]
        bbox: [f64; 4],
        /// fx,fy,cx,cy
        #[arg(long, value_parser = args::fixed_floats::<4>)]
        intrinsics: [f64; 4],
        #[arg(long, default_value_t = matfisher::warp::DEFAULT_OUTPUT_SIZE)]
        size: u32,
        #[arg(long)]
        image_out: Option<PathBuf>,
        #[arg(long)]
        label_in: Option<PathBuf>,
        #[arg(long)]
        label_out: Option<PathBuf>,
    },
    /// Sphere-marginal grids and heatmaps.
    Viz {
        #[arg(long = "F", value_parser = args::fisher_arg)]
        f: FisherParams,
        /// 1, 2, 3, all or compact.
        #[arg(long, default_value = "all")]
        axis: String,
        #[arg(long, value_parser = args::dims, default_value = "128x256")]
        dims: [usize; 2],
        #[arg(long, value_enum, default_value_t = ScaleArg::Shared)]
        scale: ScaleArg,
    },
}

/// Hex sha256 of the frozen approximation constants.
pub fn constants_hash() -> String {
    hex::encode(Sha256::digest(matfisher::normalizer::APPROX_COEFFS_JSON.as_bytes()))
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(format!("{} {}", env!("CARGO_PKG_VERSION"), constants_hash()).into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(&cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::PropertyFailure(msg)) => {
            eprintln!("matfisher: property check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            let code = if matches!(e, matfisher::Error::Divergence { .. }) { 2 } else { 1 };
            eprintln!("matfisher: {}", e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
