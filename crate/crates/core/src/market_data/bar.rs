//! Hourly OHLCV bars with per-bar VWAP.

use serde::{Deserialize, Serialize};

use super::DataError;

/// Milliseconds in one hourly bar.
pub const HOUR_MS: i64 = 3_600_000;

/// One market interval. `bin_vwap` is the per-bar volume-weighted price,
/// proxied as quote volume over base volume; zero-volume bars carry the
/// previous bar's value forward and are flagged `inactive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub open_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub quote_volume: f64,
    pub bin_vwap: f64,
    pub inactive: bool,
}

/// Time-ordered bars on a fixed hourly grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub asset: String,
    pub interval_ms: i64,
    pub bars: Vec<Bar>,
}

impl BarSeries {
    pub fn new(asset: impl Into<String>, bars: Vec<Bar>) -> Result<Self, DataError> {
        let series = Self {
            asset: asset.into(),
            interval_ms: HOUR_MS,
            bars,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Every series exposed by this module passes this validator: constant
    /// hourly spacing, finite positive prices, OHLC bracketing on active
    /// bars, and zero-volume bars carrying the previous VWAP forward.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.bars.is_empty() {
            return Err(DataError::InvalidSeries("series is empty".into()));
        }
        if self.bars[0].volume <= 0.0 {
            return Err(DataError::InvalidSeries(
                "first bar has zero volume; no price to carry forward".into(),
            ));
        }
        let mut prev: Option<&Bar> = None;
        for (i, bar) in self.bars.iter().enumerate() {
            let finite = [
                bar.open,
                bar.high,
                bar.low,
                bar.close,
                bar.volume,
                bar.quote_volume,
                bar.bin_vwap,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                return Err(DataError::Row {
                    row: i,
                    reason: "non-finite field".into(),
                });
            }
            if bar.volume < 0.0 || bar.quote_volume < 0.0 {
                return Err(DataError::Row {
                    row: i,
                    reason: "negative volume".into(),
                });
            }
            if bar.bin_vwap <= 0.0 {
                return Err(DataError::Row {
                    row: i,
                    reason: format!("bin_vwap {} is not positive", bar.bin_vwap),
                });
            }
            if let Some(p) = prev {
                if bar.open_time != p.open_time + self.interval_ms {
                    return Err(DataError::Row {
                        row: i,
                        reason: format!(
                            "open_time {} breaks the {}ms grid after {}",
                            bar.open_time, self.interval_ms, p.open_time
                        ),
                    });
                }
            }
            if bar.volume > 0.0 {
                let body_lo = bar.open.min(bar.close);
                let body_hi = bar.open.max(bar.close);
                if !(bar.low <= body_lo && body_hi <= bar.high) {
                    return Err(DataError::Row {
                        row: i,
                        reason: format!(
                            "OHLC out of order: low {} open {} close {} high {}",
                            bar.low, bar.open, bar.close, bar.high
                        ),
                    });
                }
                if bar.inactive {
                    return Err(DataError::Row {
                        row: i,
                        reason: "active bar flagged inactive".into(),
                    });
                }
            } else {
                if !bar.inactive {
                    return Err(DataError::Row {
                        row: i,
                        reason: "zero-volume bar not flagged inactive".into(),
                    });
                }
                let carried = prev.expect("first bar is active").bin_vwap;
                if bar.bin_vwap != carried {
                    return Err(DataError::Row {
                        row: i,
                        reason: format!(
                            "inactive bar must carry bin_vwap {} forward, got {}",
                            carried, bar.bin_vwap
                        ),
                    });
                }
            }
            prev = Some(bar);
        }
        Ok(())
    }
}

/// Synthesizes a zero-volume bar continuing `prev` at `open_time`.
pub fn gap_filler(prev: &Bar, open_time: i64) -> Bar {
    let price = prev.close;
    Bar {
        open_time,
        open: price,
        high: price,
        low: price,
        close: price,
        volume: 0.0,
        quote_volume: 0.0,
        bin_vwap: prev.bin_vwap,
        inactive: true,
    }
}

/// Inserts zero-volume bars wherever the hourly grid has holes. Spacing
/// that is not a whole number of intervals is reported as an error.
pub fn fill_gaps(mut bars: Vec<Bar>, interval_ms: i64) -> Result<Vec<Bar>, DataError> {
    let mut out: Vec<Bar> = Vec::with_capacity(bars.len());
    for (i, bar) in bars.drain(..).enumerate() {
        if let Some(last) = out.last() {
            let gap = bar.open_time - last.open_time;
            if gap <= 0 {
                return Err(DataError::Row {
                    row: i,
                    reason: format!(
                        "open_time {} is not after previous {}",
                        bar.open_time, last.open_time
                    ),
                });
            }
            if gap % interval_ms != 0 {
                return Err(DataError::Row {
                    row: i,
                    reason: format!("spacing {}ms is not a multiple of {}ms", gap, interval_ms),
                });
            }
            let mut t = last.open_time + interval_ms;
            while t < bar.open_time {
                let filler = gap_filler(out.last().expect("non-empty"), t);
                out.push(filler);
                t += interval_ms;
            }
        }
        out.push(bar);
    }
    Ok(out)
}

/// Chronological split fractions. Defaults follow the evaluation protocol:
/// the final 20% is test, the last 20% of the remainder is validation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction_of_remainder: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            validation_fraction_of_remainder: 0.20,
        }
    }
}

/// Splits a series into contiguous train / validation / test partitions.
/// `min_partition` is the smallest usable partition length (typically the
/// feature builder's required history); shorter partitions are an error.
pub fn split(
    series: &BarSeries,
    spec: &SplitSpec,
    min_partition: usize,
) -> Result<(BarSeries, BarSeries, BarSeries), DataError> {
    let n = series.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_val = ((n - n_test) as f64 * spec.validation_fraction_of_remainder).round() as usize;
    let n_train = n - n_test - n_val;
    let smallest = n_train.min(n_val).min(n_test);
    if smallest < min_partition.max(1) {
        // The train partition is the binding constraint at the default
        // fractions; report a total that makes every partition long enough.
        let frac = spec
            .test_fraction
            .min((1.0 - spec.test_fraction) * spec.validation_fraction_of_remainder);
        let needed = (min_partition.max(1) as f64 / frac).ceil() as usize;
        return Err(DataError::TooShort { needed, got: n });
    }
    let make = |bars: &[Bar]| BarSeries {
        asset: series.asset.clone(),
        interval_ms: series.interval_ms,
        bars: bars.to_vec(),
    };
    let train = make(&series.bars[..n_train]);
    let validation = make(&series.bars[n_train..n_train + n_val]);
    let test = make(&series.bars[n_train + n_val..]);
    Ok((train, validation, test))
}
