//! Seeded synthetic bar series with multiplicative volume seasonality.
//!
//! Log price follows a random walk; volume is strictly positive with
//! deterministic hour-of-day and day-of-week multipliers plus lognormal
//! noise, so horizon volume fractions are partially predictable.

use std::f64::consts::TAU;

use chrono::{Datelike, TimeZone, Timelike, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bar::{Bar, BarSeries, HOUR_MS};
use super::DataError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub asset: String,
    /// Log-amplitude of the hour-of-day volume multiplier.
    pub hour_amplitude: f64,
    /// Log-amplitude of the day-of-week volume multiplier.
    pub dow_amplitude: f64,
    /// Sigma of the lognormal volume noise.
    pub volume_noise_sigma: f64,
    /// Per-bar log-return standard deviation.
    pub price_volatility: f64,
    pub base_volume: f64,
    pub start_price: f64,
    /// Hour-aligned UTC milliseconds of the first bar.
    pub start_time_ms: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            asset: "SYNTH".into(),
            hour_amplitude: 0.5,
            dow_amplitude: 0.2,
            volume_noise_sigma: 0.25,
            price_volatility: 0.005,
            base_volume: 1_000.0,
            start_price: 30_000.0,
            // 2019-01-01T00:00:00Z
            start_time_ms: 1_546_300_800_000,
        }
    }
}

impl SynthSpec {
    fn check(&self) -> Result<(), DataError> {
        if !(self.volume_noise_sigma > 0.0) || !(self.price_volatility > 0.0) {
            return Err(DataError::BadSpec(
                "variance parameters must be positive".into(),
            ));
        }
        if self.hour_amplitude < 0.0 || self.dow_amplitude < 0.0 {
            return Err(DataError::BadSpec("amplitudes must be non-negative".into()));
        }
        if !(self.base_volume > 0.0) || !(self.start_price > 0.0) {
            return Err(DataError::BadSpec(
                "base volume and start price must be positive".into(),
            ));
        }
        if self.start_time_ms % HOUR_MS != 0 {
            return Err(DataError::BadSpec(
                "start time must be aligned to the hour".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic hour-of-day multiplier the generator applies.
    pub fn hour_multiplier(&self, hour: u32) -> f64 {
        (self.hour_amplitude * (TAU * hour as f64 / 24.0).sin()).exp()
    }

    /// Deterministic day-of-week multiplier (Monday = 0).
    pub fn dow_multiplier(&self, dow: u32) -> f64 {
        (self.dow_amplitude * (TAU * dow as f64 / 7.0).sin()).exp()
    }
}

pub fn hour_of_day(open_time_ms: i64) -> u32 {
    Utc.timestamp_millis_opt(open_time_ms).unwrap().hour()
}

/// Day of week with Monday = 0.
pub fn day_of_week(open_time_ms: i64) -> u32 {
    Utc.timestamp_millis_opt(open_time_ms)
        .unwrap()
        .weekday()
        .num_days_from_monday()
}

fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms; deterministic given the rng.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

pub fn generate_synthetic(
    spec: &SynthSpec,
    n_bars: usize,
    seed: u64,
) -> Result<BarSeries, DataError> {
    spec.check()?;
    if n_bars < 1000 {
        return Err(DataError::BadSpec(format!(
            "synthetic series needs at least 1000 bars, got {n_bars}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_price = spec.start_price.ln();
    let mut prev_close = spec.start_price;
    let noise_drift = -0.5 * spec.volume_noise_sigma * spec.volume_noise_sigma;
    let mut bars = Vec::with_capacity(n_bars);
    for i in 0..n_bars {
        let open_time = spec.start_time_ms + i as i64 * HOUR_MS;
        log_price += spec.price_volatility * next_normal(&mut rng);
        let close = log_price.exp();
        let open = prev_close;
        let wick = 0.5 * spec.price_volatility * next_normal(&mut rng).abs();
        let high = open.max(close) * (1.0 + wick);
        let low = open.min(close) * (1.0 - wick);
        let bin_vwap = 0.5 * (open + close);

        let seasonal = spec.hour_multiplier(hour_of_day(open_time))
            * spec.dow_multiplier(day_of_week(open_time));
        let noise = (spec.volume_noise_sigma * next_normal(&mut rng) + noise_drift).exp();
        let volume = spec.base_volume * seasonal * noise;

        bars.push(Bar {
            open_time,
            open,
            high,
            low,
            close,
            volume,
            quote_volume: bin_vwap * volume,
            bin_vwap,
            inactive: false,
        });
        prev_close = close;
    }
    BarSeries::new(spec.asset.clone(), bars)
}
