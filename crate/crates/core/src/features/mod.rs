//! Supervised window construction from bar series.
//!
//! Each bar becomes a 6-wide feature row:
//! `[volume / shifted rolling mean, sin(hour), cos(hour), sin(dow),
//! cos(dow), one-bar bin-VWAP return]`. The rolling mean is shifted by
//! `lookback + horizon` bars so that every denominator a window touches is
//! computable strictly before that window starts. Windows slide by one bar;
//! a window contributes `lookback + horizon - 1` feature rows and an
//! `horizon`-step target (bin VWAP prices and market volume fractions).
//! Windows whose horizon has zero total volume are dropped and counted.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::market_data::{day_of_week, hour_of_day, BarSeries};
use crate::numerics::Tensor;

pub const FEATURE_DIM: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "volume_norm",
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "return",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("insufficient history: need at least {needed} bars, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("invalid feature config: {0}")]
    BadConfig(String),
    #[error("window {id} out of range (max start {max})")]
    WindowOutOfRange { id: usize, max: usize },
    #[error("window {id} is degenerate: zero total horizon volume")]
    DegenerateWindow { id: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub rolling_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lookback: 120,
            horizon: 12,
            rolling_window: 336,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.lookback < 1 {
            return Err(FeatureError::BadConfig("lookback must be >= 1".into()));
        }
        if self.horizon < 2 {
            return Err(FeatureError::BadConfig("horizon must be >= 2".into()));
        }
        if self.rolling_window < 1 {
            return Err(FeatureError::BadConfig(
                "rolling window must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Rows of input per window.
    pub fn window_rows(&self) -> usize {
        self.lookback + self.horizon - 1
    }

    /// The rolling mean for bar `t` covers bars ending `lookback + horizon`
    /// before `t`, so this is the first bar with a defined denominator.
    pub fn first_usable_row(&self) -> usize {
        self.rolling_window + self.lookback + self.horizon - 1
    }

    /// Bars needed for at least one window.
    pub fn min_series_len(&self) -> usize {
        self.rolling_window + 2 * (self.lookback + self.horizon) - 1
    }
}

/// One training example. `features` has `lookback + horizon - 1` rows whose
/// row `t` only uses information available at or before that bar.
#[derive(Debug, Clone)]
pub struct WindowSample {
    /// Index of the window's first bar in the source series.
    pub window_id: usize,
    pub features: Tensor,
    pub target_prices: Vec<f64>,
    pub target_volume_fractions: Vec<f64>,
    /// `open_time` of the final horizon bar.
    pub end_time: i64,
}

#[derive(Debug, Clone)]
struct WindowMeta {
    start: usize,
    target_prices: Vec<f64>,
    target_volume_fractions: Vec<f64>,
    end_time: i64,
}

/// All windows of a series, backed by one shared per-bar feature matrix.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub asset: String,
    pub cfg: FeatureConfig,
    feature_matrix: Tensor,
    windows: Vec<WindowMeta>,
    pub degenerate_windows: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn sample(&self, index: usize) -> WindowSample {
        let meta = &self.windows[index];
        let rows = self.cfg.window_rows();
        let mut values = Vec::with_capacity(rows * FEATURE_DIM);
        for t in 0..rows {
            values.extend_from_slice(self.feature_row(meta.start + t));
        }
        WindowSample {
            window_id: meta.start,
            features: Tensor::new(vec![rows, FEATURE_DIM], values)
                .expect("feature rows are finite"),
            target_prices: meta.target_prices.clone(),
            target_volume_fractions: meta.target_volume_fractions.clone(),
            end_time: meta.end_time,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Per-bar feature row of the underlying series.
    pub fn feature_row(&self, bar_index: usize) -> &[f64] {
        self.feature_matrix.row(bar_index)
    }

    /// Stacks feature row `row_offset` of each selected window into a
    /// `len(indices) x FEATURE_DIM` matrix (one RNN timestep of a batch).
    pub fn batch_rows(&self, indices: &[usize], row_offset: usize) -> Tensor {
        let mut values = Vec::with_capacity(indices.len() * FEATURE_DIM);
        for &w in indices {
            values.extend_from_slice(self.feature_row(self.windows[w].start + row_offset));
        }
        Tensor::new(vec![indices.len(), FEATURE_DIM], values).expect("finite features")
    }

    /// Horizon targets of the selected windows as `B x horizon` matrices:
    /// `(prices, volume fractions)`.
    pub fn batch_targets(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let h = self.cfg.horizon;
        let mut prices = Vec::with_capacity(indices.len() * h);
        let mut fracs = Vec::with_capacity(indices.len() * h);
        for &w in indices {
            prices.extend_from_slice(&self.windows[w].target_prices);
            fracs.extend_from_slice(&self.windows[w].target_volume_fractions);
        }
        (
            Tensor::new(vec![indices.len(), h], prices).expect("finite prices"),
            Tensor::new(vec![indices.len(), h], fracs).expect("finite fractions"),
        )
    }

    pub fn end_time(&self, index: usize) -> i64 {
        self.windows[index].end_time
    }
}

/// Horizon targets for the window starting at bar `start`:
/// bin-VWAP prices and market volume fractions over the horizon.
pub fn targets_for_window(
    series: &BarSeries,
    start: usize,
    cfg: &FeatureConfig,
) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    let n = series.len();
    let last_target = start + cfg.lookback + cfg.horizon - 1;
    if last_target >= n {
        return Err(FeatureError::WindowOutOfRange {
            id: start,
            max: n.saturating_sub(cfg.lookback + cfg.horizon),
        });
    }
    let horizon_bars = &series.bars[start + cfg.lookback..=last_target];
    let total: f64 = horizon_bars.iter().map(|b| b.volume).sum();
    if total <= 0.0 {
        return Err(FeatureError::DegenerateWindow { id: start });
    }
    let prices = horizon_bars.iter().map(|b| b.bin_vwap).collect();
    let fracs = horizon_bars.iter().map(|b| b.volume / total).collect();
    Ok((prices, fracs))
}

/// Per-bar feature matrix (`n x FEATURE_DIM`). Rows before
/// [`FeatureConfig::first_usable_row`] have a zero volume feature (their
/// shifted rolling mean is undefined); no window ever reads them.
pub fn bar_feature_matrix(series: &BarSeries, cfg: &FeatureConfig) -> Tensor {
    let n = series.len();
    let shift = cfg.lookback + cfg.horizon;
    let window = cfg.rolling_window;

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for bar in &series.bars {
        prefix.push(prefix.last().unwrap() + bar.volume);
    }

    let mut values = Vec::with_capacity(n * FEATURE_DIM);
    for (t, bar) in series.bars.iter().enumerate() {
        let volume_norm = if t >= cfg.first_usable_row() {
            let hi = t - shift + 1;
            let lo = hi - window;
            let mean = (prefix[hi] - prefix[lo]) / window as f64;
            if mean > 0.0 {
                bar.volume / mean
            } else {
                0.0
            }
        } else {
            0.0
        };
        let hour_angle = TAU * hour_of_day(bar.open_time) as f64 / 24.0;
        let dow_angle = TAU * day_of_week(bar.open_time) as f64 / 7.0;
        let ret = if t == 0 || bar.inactive {
            0.0
        } else {
            bar.bin_vwap / series.bars[t - 1].bin_vwap - 1.0
        };
        values.extend_from_slice(&[
            volume_norm,
            hour_angle.sin(),
            hour_angle.cos(),
            dow_angle.sin(),
            dow_angle.cos(),
            ret,
        ]);
    }
    Tensor::new(vec![n, FEATURE_DIM], values).expect("features are finite")
}

/// Builds every window of `series` under `cfg`.
pub fn build_features(series: &BarSeries, cfg: &FeatureConfig) -> Result<WindowSet, FeatureError> {
    cfg.validate()?;
    let n = series.len();
    if n < cfg.min_series_len() {
        return Err(FeatureError::InsufficientHistory {
            needed: cfg.min_series_len(),
            got: n,
        });
    }

    let shift = cfg.lookback + cfg.horizon;
    let feature_matrix = bar_feature_matrix(series, cfg);

    let mut windows = Vec::new();
    let mut degenerate = 0usize;
    for start in cfg.first_usable_row()..=n - shift {
        match targets_for_window(series, start, cfg) {
            Ok((target_prices, target_volume_fractions)) => windows.push(WindowMeta {
                start,
                target_prices,
                target_volume_fractions,
                end_time: series.bars[start + shift - 1].open_time,
            }),
            Err(FeatureError::DegenerateWindow { .. }) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }

    Ok(WindowSet {
        asset: series.asset.clone(),
        cfg: *cfg,
        feature_matrix,
        windows,
        degenerate_windows: degenerate,
    })
}

/// Debug dump of the per-bar feature matrix. Columns:
/// `bar_index,open_time,volume_norm,hour_sin,hour_cos,dow_sin,dow_cos,return`.
pub fn write_features_csv(
    series: &BarSeries,
    set: &WindowSet,
    path: &std::path::Path,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "bar_index,open_time,{}",
        FEATURE_NAMES.join(",")
    )?;
    for (t, bar) in series.bars.iter().enumerate() {
        let row = set.feature_row(t);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t, bar.open_time, row[0], row[1], row[2], row[3], row[4], row[5]
        )?;
    }
    Ok(())
}
