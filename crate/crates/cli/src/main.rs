//! `evdetect`: train, run and evaluate online EV-charging detection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "evdetect", version, about = "Online EV-charging detection on smart-meter data")]
struct Cli {
    /// Flat key = value configuration file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for initialization, shuffling and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the non-EV intervals of a meter CSV.
    Train(TrainArgs),
    /// Stream readings through a trained model and emit JSONL events.
    Detect(DetectArgs),
    /// Compute precision, recall, F1 and ROC-AUC.
    Eval(EvalArgs),
    /// Write a labeled synthetic household as meter CSV.
    Synth(SynthArgs),
    /// Run the streaming threshold alone over a score CSV.
    Spot(SpotArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Meter CSV (`timestamp,power_kw[,label]`).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lm: Option<usize>,
    #[arg(long)]
    pub gm: Option<usize>,
    /// Feature width.
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub e0: Option<usize>,
    #[arg(long)]
    pub e1: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Offset between consecutive training windows.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Most non-EV readings used for training (default four weeks).
    #[arg(long)]
    pub non_ev_cap: Option<usize>,
    /// Use every non-EV reading.
    #[arg(long, conflicts_with = "non_ev_cap")]
    pub no_cap: bool,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Model checkpoint from `train`.
    #[arg(long, required_unless_present = "resume")]
    pub model: Option<PathBuf>,
    /// Engine state saved by an earlier `detect --save-state`.
    #[arg(long, conflicts_with = "model")]
    pub resume: Option<PathBuf>,
    /// Meter CSV files, or `-` to stream rows from stdin.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Events file for a single input (default stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory for `<input stem>.events.jsonl` with several inputs.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Threshold risk.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub init_level: Option<f64>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub max_peaks: Option<usize>,
    /// Post-warmup readings assumed free of charging.
    #[arg(long)]
    pub calibration_len: Option<usize>,
    /// Recompute the full first-stage attention every reading.
    #[arg(long)]
    pub no_cache: bool,
    /// Add the raw local window (`lm_kw`) to every event.
    #[arg(long)]
    pub window: bool,
    /// Also emit warmup events.
    #[arg(long)]
    pub emit_warmup: bool,
    /// Write the engine state here when the input ends (single input).
    #[arg(long)]
    pub save_state: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Engine event files (JSONL), paired in order with `--labels`.
    #[arg(long, num_args = 1.., conflicts_with = "scores")]
    pub events: Vec<PathBuf>,
    /// Labeled meter CSVs holding the ground truth for `--events`.
    #[arg(long, num_args = 1.., requires = "events")]
    pub labels: Vec<PathBuf>,
    /// `score,label[,pred]` CSV files.
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Threshold risk for score files without `pred`.
    #[arg(long)]
    pub q: Option<f64>,
    /// Leading rows of a score file used to calibrate the threshold.
    #[arg(long)]
    pub calibration_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output CSV, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub days: Option<usize>,
    /// Charging power in kW.
    #[arg(long)]
    pub ev_power: Option<f64>,
    /// Expected sessions per day.
    #[arg(long)]
    pub session_rate: Option<f64>,
    /// Shortest session in minutes.
    #[arg(long)]
    pub duration_min: Option<usize>,
    /// Longest session in minutes.
    #[arg(long)]
    pub duration_max: Option<usize>,
    /// Minutes at the start without any session.
    #[arg(long)]
    pub ev_free_minutes: Option<usize>,
    /// Base-load noise in kW.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// First timestamp (ISO-8601).
    #[arg(long)]
    pub start: Option<String>,
}

#[derive(Args, Debug)]
pub struct SpotArgs {
    /// CSV with a `score` column.
    #[arg(long)]
    pub scores: PathBuf,
    /// Trace output (JSONL), or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub init_level: Option<f64>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub max_peaks: Option<usize>,
    /// Leading scores used for calibration.
    #[arg(long)]
    pub calibration_len: Option<usize>,
}

/// Bad invocation: exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(evdetect::Error::Config(_)) = cause.downcast_ref::<evdetect::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => {
            commands::require_file(p)?;
            ConfigFile::load(p).map_err(|e| UsageError(format!("{e:#}")))?
        }
        None => ConfigFile::default(),
    };
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let seed = file.pick(cli.seed, "seed", 0u64)?;
    match cli.command {
        Command::Train(a) => commands::train::run(&a, &file, seed),
        Command::Detect(a) => commands::detect::run(&a, &file),
        Command::Eval(a) => commands::eval::run(&a, &file),
        Command::Synth(a) => commands::synth::run(&a, &file, seed),
        Command::Spot(a) => commands::spot::run(&a, &file),
    }
}
