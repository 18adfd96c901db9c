//! Dynamic neural VWAP execution at desk scale.
//!
//! The crate covers the full pipeline: hourly OHLCV acquisition
//! (exchange klines, CSV, synthetic), leakage-free feature windows,
//! recurrent cores (LSTM and a Kolmogorov-Arnold variant with per-layer
//! memory), simplex-constrained execution allocators, VWAP slippage
//! objectives, and a deterministic multi-seed training loop.

pub mod allocation;
pub mod config;
pub mod features;
pub mod market_data;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod recurrent;
pub mod training;
