//! `fewshot`: ingest requirement datasets, build few-shot pools, run
//! evaluations and shot-count sweeps, and emit tables.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 transport
//! error (model endpoint), 5 sweep finished with failed cells.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewshot_core::{Error, ErrorCategory};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRANSPORT: u8 = 4;
pub const EXIT_PARTIAL: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "fewshot",
    version,
    about = "Few-shot prompting harness for requirement classification"
)]
pub struct Cli {
    /// Print machine-readable JSON summaries.
    #[arg(long, global = true)]
    pub json: bool,
    /// Validate and print the plan without running models.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset and print its class distribution.
    Ingest(IngestArgs),
    /// Build the stratified few-shot pool from the training side.
    Pool(ConfigArgs),
    /// Show the demonstrations chosen for a query.
    Select(SelectArgs),
    /// Evaluate one (model, method, shots) configuration.
    Run(ConfigArgs),
    /// Run the shot-count grid for every model and method.
    Sweep(ConfigArgs),
    /// k-fold cross-validation at a fixed shot count.
    Cv(CvArgs),
    /// Format saved reports as a results table.
    Report(ReportArgs),
    /// Re-score a saved trace under a scoring policy.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Dataset CSV; falls back to the config's dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in scheme name or scheme file.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub text_column: Option<String>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Also write the split plan as JSON.
    #[arg(long)]
    pub split_out: Option<PathBuf>,
}

/// Config file plus overrides; flags win over the file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Keep the response cache in memory only.
    #[arg(long)]
    pub no_cache: bool,
    /// Comma-separated chat profile names.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated methods for sweeps.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Comma-separated shot grid for sweeps.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// strict or first_match.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Free-text query.
    #[arg(long, conflicts_with = "record_id")]
    pub query: Option<String>,
    /// Query with a test-side record.
    #[arg(long)]
    pub record_id: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Take the shot count from a sweep manifest (file or output directory).
    #[arg(long, conflicts_with = "shots")]
    pub shots_from: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// binary or multiclass; derived from the reports' scheme otherwise.
    #[arg(long)]
    pub layout: Option<String>,
    /// Write table.txt and table.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Report written with the trace; supplies run metadata and scheme.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, default_value = "strict")]
    pub policy: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure carried to the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.category() {
            ErrorCategory::Config => EXIT_CONFIG,
            ErrorCategory::Data => EXIT_DATA,
            ErrorCategory::Transport => EXIT_TRANSPORT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
