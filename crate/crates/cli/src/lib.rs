//! `liftguard` command line.
//!
//! Data goes to stdout, diagnostics to stderr. Exit codes: 0 success,
//! 1 runtime error, 2 usage or configuration error.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{predict_frames, PredictionLine};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "liftguard", version, about = "Lifting-posture classifier")]
pub struct Cli {
    /// Seed for every random choice (data generation, split, init).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Raise log verbosity (-v info, -vv debug). LIFTGUARD_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset tree labelled by the posture rule.
    Gen(GenArgs),
    /// Train on a dataset tree and evaluate on the held-out split.
    Train(TrainArgs),
    /// Evaluate a model on every window of a dataset tree.
    Eval(EvalArgs),
    /// Classify each 30-frame window of a frame file.
    Predict(PredictArgs),
    /// Run the websocket inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 62)]
    pub n: usize,
    /// Fraction of squat clips.
    #[arg(long, default_value_t = 0.5)]
    pub style_mix: f64,
    /// Std-dev of Gaussian landmark noise (normalized image units).
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    /// Camera yaw is drawn from [-range, range] degrees.
    #[arg(long, default_value_t = 30.0)]
    pub yaw_range: f64,
    #[arg(long, default_value_t = 0.85)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.15)]
    pub scale_max: f64,
    /// Remove existing clips under good/ and bad/ first.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file; history.csv and report.json are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Training accuracy that stops training once held for --patience epochs.
    #[arg(long, default_value_t = 0.95)]
    pub early_stop: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.25)]
    pub test_frac: f64,
    /// Mini-batch size; full batch when omitted.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, value_delimiter = ',', default_value = "64,128,64")]
    pub lstm_hidden: Vec<usize>,
    /// Hidden dense widths; the 2-way softmax head is appended.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    pub dense_hidden: Vec<usize>,
    /// Keep the 11 face landmarks (132 features instead of 88).
    #[arg(long)]
    pub keep_head: bool,
    /// Center on the hips and scale by torso length before training.
    #[arg(long)]
    pub canonicalize: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Frame file, one JSON frame per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Emit a prediction every N frames after warm-up.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 60.0)]
    pub idle_timeout: f64,
    #[arg(long, default_value_t = 0.3)]
    pub risk_low: f64,
    #[arg(long, default_value_t = 0.7)]
    pub risk_high: f64,
    #[arg(long, default_value_t = 10)]
    pub risk_log: usize,
    #[arg(long, default_value_t = 64 * 1024)]
    pub max_message_bytes: usize,
}

/// Rejected flag combination, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<liftguard_core::Error>() {
        Some(liftguard_core::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let env = env_logger::Env::new().filter_or("LIFTGUARD_LOG", default);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a, cli.seed),
        Command::Train(a) => commands::train(&a, cli.seed),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Serve(a) => commands::serve(&a),
    }
}
