//! `facecascade` command line: detection, training, evaluation, benchmarking
//! and synthetic data generation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "facecascade", version, about = "Cascaded CNN face detection with landmarks", args_override_self = true)]
struct Cli {
    /// `key = value` file with defaults for the subcommand's flags; flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect faces and landmarks in PNM images.
    Detect(DetectArgs),
    /// Train one stage network (or the Haar cascade) on synthetic data.
    Train(TrainArgs),
    /// Score detections against a ground-truth manifest.
    Eval(EvalArgs),
    /// Per-stage latency statistics as CSV.
    Bench(BenchArgs),
    /// Write synthetic scenes and their ground-truth manifest.
    Synth(SynthArgs),
    /// Side-by-side table of several detectors' results.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Mtcnn,
    Haar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainStage {
    Pnet,
    Rnet,
    Onet,
    Haar,
}

/// Options shared by everything that runs a detector.
#[derive(Debug, Args)]
pub struct DetectorArgs {
    #[arg(long, value_enum, default_value = "mtcnn")]
    pub detector: DetectorKind,
    /// Weight file(s) covering all three stages; repeat to merge per-stage files.
    #[arg(long, value_name = "PATH")]
    pub weights: Vec<PathBuf>,
    /// Haar cascade model (with `--detector haar`).
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    pub min_face: f32,
    /// Stage score thresholds `t1,t2,t3`.
    #[arg(long, default_value = "0.6,0.7,0.7")]
    pub thresholds: String,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Input image; repeatable.
    #[arg(long, value_name = "PATH")]
    pub image: Vec<PathBuf>,
    /// Directory of .ppm/.pgm/.pnm images, processed in name order.
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Results file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out_json: Option<PathBuf>,
    /// Directory receiving one annotated PPM per input image.
    #[arg(long, value_name = "DIR")]
    pub out_overlay: Option<PathBuf>,
    /// Print per-stage candidate counts and timings to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "pnet")]
    pub stage: TrainStage,
    /// Number of synthetic training samples (positives for the Haar cascade).
    #[arg(long, default_value_t = 2000)]
    pub synth_n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.7)]
    pub ohem_ratio: f32,
    /// Output weight file (cascade model for `--stage haar`).
    #[arg(long, value_name = "PATH")]
    pub out_weights: PathBuf,
    /// Per-epoch loss history.
    #[arg(long, value_name = "PATH")]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Counts `tp,fp,fn,tn`; metrics are computed from them directly.
    #[arg(long, value_name = "TP,FP,FN,TN", conflicts_with_all = ["detections_json", "truth"])]
    pub matrix: Option<String>,
    /// Detections written by `detect --out-json`.
    #[arg(long, value_name = "PATH")]
    pub detections_json: Option<PathBuf>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Ground-truth manifest; image paths are relative to its directory.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f32,
    /// Metrics as `metric,value` CSV.
    #[arg(long, value_name = "PATH")]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// Weight file(s) covering all three stages; repeat to merge per-stage files.
    #[arg(long, value_name = "PATH", required = true)]
    pub weights: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 20.0)]
    pub min_face: f32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `NAME=VALUE` where VALUE is a metrics CSV from `eval --out-csv` or a
    /// detection-rate percentage; repeat per detector, in table order.
    #[arg(long, value_name = "NAME=VALUE", required = true)]
    pub row: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub out_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let result = match cli.command {
        Command::Detect(a) => commands::detect(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}
