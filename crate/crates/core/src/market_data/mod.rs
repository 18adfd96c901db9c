//! Acquisition, validation, and partitioning of hourly bar series.

pub mod bar;
pub mod csv_io;
pub mod klines;
pub mod synth;

pub use bar::{fill_gaps, split, Bar, BarSeries, SplitSpec, HOUR_MS};
pub use csv_io::{parse_bar_fields, read_csv, write_csv, CSV_HEADER};
pub use klines::{fetch_klines, HttpTransport, KlinesConfig, KlinesTransport};
pub use synth::{day_of_week, generate_synthetic, hour_of_day, SynthSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("series too short: need at least {needed} bars, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("HTTP request failed after {attempts} attempts: {reason}")]
    Http { attempts: u32, reason: String },
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}
