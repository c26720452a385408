mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::artifacts::Workspace;
use crate::config::{parse_config, ConfigError, Overrides, RunConfig};

pub const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (commit ",
    env!("DEFER_GIT_COMMIT"),
    ", ",
    env!("DEFER_RUSTC_VERSION"),
    ", target ",
    env!("DEFER_BUILD_TARGET"),
    ", profile ",
    env!("DEFER_BUILD_PROFILE"),
    ")"
);

#[derive(Parser)]
#[command(name = "defer", version, long_version = LONG_VERSION, about = "Train and compare classifiers that can pass to a decision maker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    config: PathBuf,
    /// Replace the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter, encode and split a dataset.
    PrepareData(Common),
    /// Train the simulated decision maker and write its predictions.
    TrainDm(Common),
    /// Train one model and evaluate the combined system.
    Train(Common),
    /// Evaluate a saved model against saved DM predictions.
    Evaluate(Common),
    /// Run every (alpha_fair, gamma) setting of the sweep grid.
    Sweep(Common),
    /// Extract the Pareto front and deferral-rate bins of a sweep.
    Pareto(Common),
    /// Combine several sweep reports.
    Report(Common),
}

type Handler = fn(&RunConfig, &Workspace) -> anyhow::Result<()>;

impl Command {
    fn dispatch(&self) -> (&Common, &'static str, &'static str, Handler) {
        match self {
            Command::PrepareData(c) => (c, "prepare-data", "data", commands::prepare_data),
            Command::TrainDm(c) => (c, "train-dm", "dm", commands::train_dm),
            Command::Train(c) => (c, "train", "model", commands::train),
            Command::Evaluate(c) => (c, "evaluate", "evaluate", commands::evaluate),
            Command::Sweep(c) => (c, "sweep", "sweep", commands::sweep),
            Command::Pareto(c) => (c, "pareto", "pareto", commands::pareto),
            Command::Report(c) => (c, "report", "report", commands::report),
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let (common, name, subdir, handler) = cli.command.dispatch();
    let overrides = Overrides {
        seed: common.seed,
        output_dir: common.out.clone(),
        jobs: common.jobs,
    };
    let cfg = parse_config(&common.config, &overrides)?;
    let ws = Workspace::open(&cfg, name, subdir)?;
    handler(&cfg, &ws)?;
    ws.finish(cfg.sweep.jobs)
}

fn error_kind(err: &anyhow::Error) -> (&'static str, serde_json::Value) {
    if let Some(e) = err.downcast_ref::<ConfigError>() {
        return (e.kind(), e.details());
    }
    let kind = match err.chain().find_map(|c| c.downcast_ref::<defer_core::Error>()) {
        Some(defer_core::Error::DimensionMismatch { .. }) => "dimension_mismatch",
        Some(defer_core::Error::NonFinite(_)) => "non_finite",
        Some(defer_core::Error::Empty(_)) => "empty_input",
        Some(defer_core::Error::InvalidArgument(_)) => "invalid_argument",
        Some(defer_core::Error::UndefinedCell { .. }) => "undefined_cell",
        Some(defer_core::Error::DegenerateSplit { .. }) => "degenerate_split",
        Some(defer_core::Error::Diverged { .. }) => "diverged",
        Some(defer_core::Error::MissingColumn(_)) => "missing_column",
        Some(defer_core::Error::NoHeader { .. }) => "no_header",
        Some(defer_core::Error::IdMismatch(_)) => "id_mismatch",
        Some(defer_core::Error::Io { .. }) => "io",
        Some(defer_core::Error::Csv(_)) => "csv",
        Some(defer_core::Error::Json(_)) => "json",
        None if err.chain().any(|c| c.is::<std::io::Error>()) => "io",
        None => "runtime",
    };
    (kind, serde_json::Value::Null)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, details) = error_kind(&err);
            let message = format!("{err:#}");
            let json = serde_json::json!({ "error": { "kind": kind, "message": message, "details": details } });
            eprintln!("{json}");
            eprintln!("error: {message}");
            if err.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
