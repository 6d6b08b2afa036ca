mod commands;
mod config;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Errors surfaced to the user. Usage errors exit with status 2, module
/// errors with status 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(tslr_core::Error),
}

impl From<tslr_core::Error> for CliError {
    fn from(e: tslr_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "tslr", version, about = "Time-smoothed nonnegative low-rank models for cohorts of daily time series")]
pub struct Cli {
    /// Maximum number of worker threads (falls back to TSLR_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Turn a sleep event log into per-subject matrix CSVs.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        sample_minutes: Option<u32>,
        /// key=value file with filter thresholds.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a dataset directory.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leading singular values of the stacked observed rows.
    Svd {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, default_value_t = 50)]
        k: usize,
        /// Also write `index,singular_value` to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-day cohort percentiles of every component.
    Trends {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subjects far from the cohort median on one component.
    Outliers {
        #[arg(long)]
        model: PathBuf,
        /// 1-based component.
        #[arg(long, default_value_t = 1)]
        component: usize,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-means on coefficient trajectories, or on raw rows with --data.
    Cluster {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Cluster the raw rows of this dataset instead of a model.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short)]
        k: Option<usize>,
        /// 1-based components, comma separated.
        #[arg(long)]
        components: Option<String>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast a future window from a past window and score four methods.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Half-open day range `start:end`.
        #[arg(long)]
        past: String,
        #[arg(long)]
        future: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort with known factors.
    Synth {
        /// key=value file with the generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a matrix CSV as a binary graymap.
    Render {
        #[arg(long)]
        matrix: PathBuf,
        /// Image height; defaults to the last observed day.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("TSLR_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("TSLR_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads(cli.threads).and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: usage: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
