//! `vwap-forge`: data acquisition, training, evaluation, streaming
//! execution, and report export for the dynamic VWAP allocator.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "vwap-forge",
    version,
    about = "Dynamic neural VWAP execution pipeline",
    propagate_version = true
)]
pub struct Cli {
    /// TOML config file; omitted keys take built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Seed override: replaces the configured seed list with this one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Lookback override (bars of history per window).
    #[arg(long, global = true)]
    pub lookback: Option<usize>,

    /// Horizon override (bars over which the order executes).
    #[arg(long, global = true)]
    pub horizon: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Download hourly klines into a bar CSV.
    Fetch {
        /// Exchange symbol, e.g. BTCUSDT.
        #[arg(long)]
        symbol: String,
        /// Start time: RFC 3339 or integer epoch milliseconds (inclusive).
        #[arg(long)]
        start: String,
        /// End time: RFC 3339 or integer epoch milliseconds (exclusive).
        #[arg(long)]
        end: String,
    },
    /// Generate a seeded synthetic bar CSV.
    Synth {
        /// Number of hourly bars (at least 1000).
        #[arg(long)]
        bars: usize,
        /// Asset label; also names the output file.
        #[arg(long)]
        asset: Option<String>,
    },
    /// Chronologically split a bar CSV into train/validation/test files.
    Split {
        /// Input bar CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one or more allocator models and write run artifacts.
    Train {
        /// Model kind(s): naive|static-lstm|static-tkan|dynamic-lstm|dynamic-tkan.
        /// Repeat or comma-separate for a grid.
        #[arg(long = "model", value_delimiter = ',', required = true)]
        models: Vec<String>,
        /// Loss kind(s): absolute|quadratic|volume-curve.
        #[arg(long = "loss", value_delimiter = ',', default_values_t = [String::from("absolute")])]
        losses: Vec<String>,
        /// Input bar CSV (split per config before training).
        #[arg(long)]
        data: PathBuf,
        /// Parallel worker threads over grid cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint (or `naive`) and export metric series.
    Evaluate {
        /// Checkpoint path, or `naive`.
        #[arg(long)]
        model: String,
        /// Input bar CSV.
        #[arg(long)]
        data: PathBuf,
        /// Which chronological partition to evaluate: train|validation|test|all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Stream bars in, emit allocation decisions as they become final.
    Execute {
        /// Checkpoint path, or `naive`.
        #[arg(long)]
        model: String,
        /// Bar CSV to stream, or `-` for stdin (one bar per line).
        #[arg(long)]
        stream: String,
    },
    /// Regenerate the aggregate report table from stored run artifacts.
    Report {
        /// Directory scanned recursively for metrics.json files.
        #[arg(long)]
        runs: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
