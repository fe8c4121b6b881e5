//! The `nowcast` command line.
//!
//! Exit codes: 0 success, 2 usage, 3 data or configuration error,
//! 4 numeric failure. `NOWCAST_THREADS` caps the worker pool (0 = auto).

mod commands;
pub mod manifest;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{load_parts, PRECIP_INPUTS, PRECIP_LEADS};

#[derive(Parser, Debug)]
#[command(name = "nowcast", version, about = "Precipitation and cloud-cover nowcasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic advecting-blob dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoints, history and a manifest.
    Train(TrainArgs),
    /// Score checkpoints and/or the persistence baseline on the test split.
    Evaluate(EvaluateArgs),
    /// Write denormalised predictions for test windows.
    Predict(PredictArgs),
    /// Grad-CAM heatmaps for one input window.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// key=value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square frame size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub blobs: Option<usize>,
    /// Pixels per frame as `x,y`.
    #[arg(long, allow_hyphen_values = true)]
    pub wind: Option<settings::Pair>,
    #[arg(long)]
    pub growth: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Dataset flags shared by the commands that read frames.
#[derive(Args, Debug)]
pub struct DataArgs {
    /// An NWDS file (split 70/15/15 in time) or a directory holding
    /// train.nwds, val.nwds and test.nwds.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Minimum wet-pixel share for a frame to be selected.
    #[arg(long)]
    pub select_fraction: Option<f64>,
    /// Step between consecutive window anchors.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// sar or smaat.
    #[arg(long)]
    pub variant: Option<crate::model::Variant>,
    #[arg(long)]
    pub in_frames: Option<usize>,
    #[arg(long)]
    pub lead_minutes: Option<u32>,
    /// Cloud-cover setup: 4 inputs, the next 6 frames as outputs.
    #[arg(long)]
    pub cloud: bool,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Channel-attention reduction ratio.
    #[arg(long)]
    pub reduction: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model checkpoint; repeat for several models.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Add a baseline row; only `persistence` is known.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Window setup for a persistence-only run.
    #[arg(long)]
    pub in_frames: Option<usize>,
    #[arg(long)]
    pub lead_minutes: Option<u32>,
    #[arg(long)]
    pub cloud: bool,
    /// Rain threshold in mm/h (probability for binary data).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Only this test window (default: all).
    #[arg(long)]
    pub window: Option<usize>,
    /// Output NWDS file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// An NWDS file with the input frames, or an index into the test
    /// windows of --data.
    #[arg(long)]
    pub input_window: Option<String>,
    /// `all` or a comma-separated list of layer names.
    #[arg(long)]
    pub targets: Option<String>,
    /// Also write PPM images.
    #[arg(long)]
    pub ppm: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn configure_threads() {
    let n = std::env::var("NOWCAST_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let argv: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("nowcast: {e}");
            e.exit_code()
        }
    }
}
