//! Training losses and evaluation metrics.
//!
//! Slippage is relative: `(sum(P*v) - sum(P*V~)) / sum(P*V~)` with the
//! market VWAP computed over the horizon bars only, so it is invariant to
//! uniform price scaling and the reported magnitudes are dimensionless.
//! The volume-curve R² uses the uniform curve as its baseline denominator,
//! which pins the naive allocator to an R² of exactly zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::WindowSet;
use crate::model::{Model, ModelError};
use crate::numerics::{NumericsError, Tape, Var};

#[derive(Debug, Error)]
pub enum ObjectivesError {
    #[error("degenerate window: market VWAP is not positive")]
    DegenerateWindow,
    #[error("empty batch")]
    EmptyBatch,
    #[error("volume-curve R² undefined: all targets are uniform")]
    UniformTargets,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Absolute,
    Quadratic,
    VolumeCurve,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Absolute, LossKind::Quadratic, LossKind::VolumeCurve];

    /// Row label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::Absolute => "Absolute",
            LossKind::Quadratic => "Quadratic",
            LossKind::VolumeCurve => "Volume Curve",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Absolute => "absolute",
            LossKind::Quadratic => "quadratic",
            LossKind::VolumeCurve => "volume-curve",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absolute" => Ok(LossKind::Absolute),
            "quadratic" => Ok(LossKind::Quadratic),
            "volume-curve" => Ok(LossKind::VolumeCurve),
            other => Err(format!("unknown loss kind `{other}`")),
        }
    }
}

/// Signed relative slippage of an execution curve against the market VWAP
/// over the same horizon.
pub fn slippage(prices: &[f64], curve: &[f64], fracs: &[f64]) -> Result<f64, ObjectivesError> {
    if prices.len() != curve.len() || prices.len() != fracs.len() {
        return Err(ObjectivesError::LengthMismatch(format!(
            "prices {}, curve {}, fractions {}",
            prices.len(),
            curve.len(),
            fracs.len()
        )));
    }
    let exec: f64 = prices.iter().zip(curve).map(|(&p, &v)| p * v).sum();
    let market: f64 = prices.iter().zip(fracs).map(|(&p, &f)| p * f).sum();
    if market <= 0.0 {
        return Err(ObjectivesError::DegenerateWindow);
    }
    Ok((exec - market) / market)
}

/// Diagnostic decomposition of the slippage bound: a price-deviation term
/// `sum |(P_exec - P) * v|` and a volume-error term `sum |P * (v - V~)|`,
/// both relative to the market VWAP. `|slippage| <= term1 + term2` when
/// the executed bin prices are `exec_prices`.
pub fn slippage_bound_terms(
    bin_prices: &[f64],
    exec_prices: &[f64],
    curve: &[f64],
    fracs: &[f64],
) -> Result<(f64, f64), ObjectivesError> {
    let market: f64 = bin_prices.iter().zip(fracs).map(|(&p, &f)| p * f).sum();
    if market <= 0.0 {
        return Err(ObjectivesError::DegenerateWindow);
    }
    let mut price_term = 0.0;
    let mut volume_term = 0.0;
    for i in 0..bin_prices.len() {
        price_term += ((exec_prices[i] - bin_prices[i]) * curve[i]).abs();
        volume_term += (bin_prices[i] * (curve[i] - fracs[i])).abs();
    }
    Ok((price_term / market, volume_term / market))
}

/// Mean batch loss over `(prices, curve, fractions)` windows.
pub fn loss_batch(
    kind: LossKind,
    windows: &[(&[f64], &[f64], &[f64])],
) -> Result<f64, ObjectivesError> {
    if windows.is_empty() {
        return Err(ObjectivesError::EmptyBatch);
    }
    let mut total = 0.0;
    for (prices, curve, fracs) in windows {
        total += match kind {
            LossKind::Absolute => slippage(prices, curve, fracs)?.abs(),
            LossKind::Quadratic => {
                let s = slippage(prices, curve, fracs)?;
                s * s
            }
            LossKind::VolumeCurve => {
                let h = curve.len() as f64;
                curve
                    .iter()
                    .zip(*fracs)
                    .map(|(&v, &f)| (v - f) * (v - f))
                    .sum::<f64>()
                    / h
            }
        };
    }
    Ok(total / windows.len() as f64)
}

/// Differentiable batch loss: `curve`, `prices`, `fracs` are `B x h`.
pub fn loss_tape(
    tape: &Tape,
    kind: LossKind,
    curve: Var,
    prices: Var,
    fracs: Var,
) -> Result<Var, NumericsError> {
    match kind {
        LossKind::Absolute | LossKind::Quadratic => {
            let exec = tape.sum_cols(tape.mul(prices, curve)?)?;
            let market = tape.sum_cols(tape.mul(prices, fracs)?)?;
            let slip = tape.div(tape.sub(exec, market)?, market)?;
            match kind {
                LossKind::Absolute => tape.mean_all(tape.abs(slip)?),
                _ => tape.mean_all(tape.square(slip)?),
            }
        }
        LossKind::VolumeCurve => tape.mean_all(tape.square(tape.sub(curve, fracs)?)?),
    }
}

/// Volume-curve R² over a dataset of `(prediction, target)` rows, with the
/// uniform curve `1/h` as the baseline. Uniform predictions score exactly
/// zero; a perfect predictor scores one.
pub fn r2_volume_curve(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64, ObjectivesError> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(ObjectivesError::LengthMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut residual = 0.0;
    let mut baseline = 0.0;
    for (pred, target) in predictions.iter().zip(targets) {
        let uniform = 1.0 / target.len() as f64;
        for (&v, &t) in pred.iter().zip(target) {
            residual += (v - t) * (v - t);
            baseline += (t - uniform) * (t - uniform);
        }
    }
    if baseline <= 0.0 {
        return Err(ObjectivesError::UniformTargets);
    }
    Ok(1.0 - residual / baseline)
}

/// Aggregate metrics over a window set. Internal values are unscaled; the
/// report scales follow the table convention (absolute x1e2, quadratic
/// x1e4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub abs_vwap_loss: f64,
    pub quad_vwap_loss: f64,
    pub r2_volume: f64,
    pub n_windows: usize,
}

impl MetricSet {
    pub fn abs_scaled(&self) -> f64 {
        self.abs_vwap_loss * 1e2
    }

    pub fn quad_scaled(&self) -> f64 {
        self.quad_vwap_loss * 1e4
    }

    pub fn value(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Absolute => self.abs_vwap_loss,
            LossKind::Quadratic => self.quad_vwap_loss,
            LossKind::VolumeCurve => self.r2_volume,
        }
    }
}

/// Per-window evaluation record for the slippage series export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub window_id: usize,
    pub end_time: i64,
    pub signed_slippage: f64,
    pub abs_slippage: f64,
    pub naive_abs_slippage: f64,
    pub bound_price_term: f64,
    pub bound_volume_term: f64,
}

/// Mean/band statistics of the executed curve at one horizon step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationStepStats {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
    pub p05: f64,
    pub p95: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricSet,
    pub records: Vec<EvaluationRecord>,
    pub allocation_stats: Vec<AllocationStepStats>,
}

/// Metrics and export series from a full set of per-window curves.
pub fn evaluation_from_curves(
    set: &WindowSet,
    curves: &[Vec<f64>],
) -> Result<Evaluation, ObjectivesError> {
    if curves.len() != set.len() || set.is_empty() {
        return Err(ObjectivesError::LengthMismatch(format!(
            "{} curves for {} windows",
            curves.len(),
            set.len()
        )));
    }
    let horizon = set.cfg.horizon;
    let naive = vec![1.0 / horizon as f64; horizon];

    let mut abs_sum = 0.0;
    let mut quad_sum = 0.0;
    let mut records = Vec::with_capacity(set.len());
    let mut targets = Vec::with_capacity(set.len());
    for (i, curve) in curves.iter().enumerate() {
        let sample = set.sample(i);
        let s = slippage(&sample.target_prices, curve, &sample.target_volume_fractions)?;
        let naive_s = slippage(
            &sample.target_prices,
            &naive,
            &sample.target_volume_fractions,
        )?;
        let (price_term, volume_term) = slippage_bound_terms(
            &sample.target_prices,
            &sample.target_prices,
            curve,
            &sample.target_volume_fractions,
        )?;
        abs_sum += s.abs();
        quad_sum += s * s;
        records.push(EvaluationRecord {
            window_id: sample.window_id,
            end_time: sample.end_time,
            signed_slippage: s,
            abs_slippage: s.abs(),
            naive_abs_slippage: naive_s.abs(),
            bound_price_term: price_term,
            bound_volume_term: volume_term,
        });
        targets.push(sample.target_volume_fractions);
    }

    let r2 = r2_volume_curve(curves, &targets)?;
    let n = set.len();
    let metrics = MetricSet {
        abs_vwap_loss: abs_sum / n as f64,
        quad_vwap_loss: quad_sum / n as f64,
        r2_volume: r2,
        n_windows: n,
    };

    let allocation_stats = (0..horizon)
        .map(|step| {
            let mut values: Vec<f64> = curves.iter().map(|c| c[step]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            // nearest-rank quantiles
            let at = |q: f64| values[((n - 1) as f64 * q).round() as usize];
            AllocationStepStats {
                step: step + 1,
                mean,
                std: var.sqrt(),
                p05: at(0.05),
                p95: at(0.95),
            }
        })
        .collect();

    Ok(Evaluation {
        metrics,
        records,
        allocation_stats,
    })
}

/// Runs the model over every window of `set` in batches and evaluates.
pub fn evaluate_model(
    model: &Model,
    set: &WindowSet,
    batch_size: usize,
) -> Result<Evaluation, ObjectivesError> {
    let curves = model_curves(model, set, batch_size)?;
    evaluation_from_curves(set, &curves)
}

/// All per-window curves of a model over a window set.
pub fn model_curves(
    model: &Model,
    set: &WindowSet,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, ObjectivesError> {
    if set.is_empty() {
        return Err(ObjectivesError::EmptyBatch);
    }
    let batch_size = batch_size.max(1);
    let mut curves = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let tape = Tape::new();
        let bind = crate::numerics::Binding::new(&tape, &model.params);
        let rows = set.cfg.window_rows();
        let xs: Vec<Var> = (0..rows)
            .map(|t| tape.input(set.batch_rows(chunk, t)))
            .collect();
        let curve = model.curve_tape(&tape, &bind, &xs)?;
        let values = tape.value(curve);
        for i in 0..chunk.len() {
            curves.push(values.row(i).to_vec());
        }
    }
    Ok(curves)
}

/// Slippage series export:
/// `window_end_time,signed_slippage,abs_slippage,abs_slippage_minus_naive`.
pub fn write_slippage_csv(
    records: &[EvaluationRecord],
    path: &std::path::Path,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "window_end_time,signed_slippage,abs_slippage,abs_slippage_minus_naive"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.end_time,
            r.signed_slippage,
            r.abs_slippage,
            r.abs_slippage - r.naive_abs_slippage
        )?;
    }
    Ok(())
}

/// Allocation band export: `step,mean,std,p05,p95`.
pub fn write_allocation_stats_csv(
    stats: &[AllocationStepStats],
    path: &std::path::Path,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,mean,std,p05,p95")?;
    for s in stats {
        writeln!(out, "{},{},{},{},{}", s.step, s.mean, s.std, s.p05, s.p95)?;
    }
    Ok(())
}
