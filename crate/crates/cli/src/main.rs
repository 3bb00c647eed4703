use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

/// Structural VAR pipeline for the crude-oil market.
#[derive(Debug, Parser)]
#[command(name = "oilsvar", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve every source, warm the cache and write the panel.
    Fetch,
    /// Fit the reduced-form VAR.
    Estimate,
    /// Write the monthly structural shocks.
    Shocks,
    /// Impulse responses with bootstrap bands.
    Irf,
    /// Historical decomposition of every variable.
    Hd,
    /// Distributed-lag regressions of configured targets on each shock.
    Stage2 {
        /// Only this target.
        #[arg(long)]
        target: Option<String>,
        /// Shock lags in the second-stage regression.
        #[arg(long)]
        target_lags: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Data configuration file.
    #[arg(long, global = true, default_value = "data/original.conf")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Estimation window FROM:TO.
    #[arg(long, global = true)]
    pub sample: Option<String>,
    #[arg(long, global = true)]
    pub lags: Option<usize>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Bootstrap replications.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// wild or mbb.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Block length of the active bootstrap.
    #[arg(long, global = true)]
    pub block_len: Option<usize>,
    /// Serve remote series from cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Variables reported as running sums, comma separated, or `none`.
    #[arg(long, global = true)]
    pub cumulate: Option<String>,
    /// Real-price demeaning window: sample, none or FROM:TO.
    #[arg(long, global = true)]
    pub demean: Option<String>,
    /// Bootstrap worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("Io", e.to_string())
    }
}
