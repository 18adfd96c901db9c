//! Per-run records and the aggregated report table.
//!
//! One `RunRecord` is persisted per (model, loss, seed) run; `aggregate`
//! groups them by (model, asset, loss) into rows with mean and population
//! std per metric, formatted in the table convention (absolute VWAP loss
//! x1e2, quadratic x1e4, eight decimals).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objectives::MetricSet;

pub const RUN_RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub model: String,
    pub asset: String,
    /// `None` for the naive benchmark (reported as "N/A").
    pub loss: Option<String>,
    pub seed: u64,
    pub metrics: MetricSet,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub train_seconds: f64,
    pub degenerate_windows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub asset: String,
    pub loss: String,
    pub abs_mean: f64,
    pub abs_std: f64,
    pub quad_mean: f64,
    pub quad_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub time_mean: f64,
    pub time_std: f64,
    pub n_seeds: usize,
    /// Std reported as zero because only one seed completed.
    pub single_seed: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups records by (model, asset, loss), preserving first-seen order.
pub fn aggregate(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, String, Option<String>)> = Vec::new();
    for r in records {
        let key = (r.model.clone(), r.asset.clone(), r.loss.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|(model, asset, loss)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| &r.model == model && &r.asset == asset && &r.loss == loss)
                .collect();
            let pull = |f: &dyn Fn(&RunRecord) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (abs_mean, abs_std) = mean_std(&pull(&|r| r.metrics.abs_scaled()));
            let (quad_mean, quad_std) = mean_std(&pull(&|r| r.metrics.quad_scaled()));
            let (r2_mean, r2_std) = mean_std(&pull(&|r| r.metrics.r2_volume));
            let (time_mean, time_std) = mean_std(&pull(&|r| r.train_seconds));
            ReportRow {
                model: model.clone(),
                asset: asset.clone(),
                loss: loss.clone().unwrap_or_else(|| "N/A".into()),
                abs_mean,
                abs_std,
                quad_mean,
                quad_std,
                r2_mean,
                r2_std,
                time_mean,
                time_std,
                n_seeds: group.len(),
                single_seed: group.len() < 2,
            }
        })
        .collect()
}

fn model_label(model: &str) -> String {
    model
        .parse::<crate::model::ModelKind>()
        .map(|k| k.label().to_string())
        .unwrap_or_else(|_| model.to_string())
}

fn loss_label(loss: &str) -> String {
    loss.parse::<crate::objectives::LossKind>()
        .map(|k| k.label().to_string())
        .unwrap_or_else(|_| loss.to_string())
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "model,asset,optimization,abs_vwap_loss_1e2_mean,abs_vwap_loss_1e2_std,\
         quad_vwap_loss_1e4_mean,quad_vwap_loss_1e4_std,r2_vol_curve_mean,r2_vol_curve_std,\
         training_time_s_mean,training_time_s_std,seeds"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{}",
            model_label(&r.model),
            r.asset,
            loss_label(&r.loss),
            r.abs_mean,
            r.abs_std,
            r.quad_mean,
            r.quad_std,
            r.r2_mean,
            r.r2_std,
            r.time_mean,
            r.time_std,
            r.n_seeds
        )?;
    }
    Ok(())
}

/// Fixed-width table mirroring the CSV, for terminals and logs.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:<10} {:<14} {:>23} {:>23} {:>23} {:>23}\n",
        "Model Type",
        "Asset",
        "Optimization",
        "Abs. VWAP Loss (1e-2)",
        "Quad. VWAP Loss (1e-4)",
        "R2 Vol. Curve",
        "Training Time (s)"
    ));
    out.push_str(&format!(
        "{:<24} {:<10} {:<14} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}\n",
        "", "", "", "Mean", "Std", "Mean", "Std", "Mean", "Std", "Mean", "Std"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:<10} {:<14} {:>11.8} {:>11.8} {:>11.8} {:>11.8} {:>11.8} {:>11.8} {:>11.5} {:>11.5}\n",
            model_label(&r.model),
            r.asset,
            loss_label(&r.loss),
            r.abs_mean,
            r.abs_std,
            r.quad_mean,
            r.quad_std,
            r.r2_mean,
            r.r2_std,
            r.time_mean,
            r.time_std
        ));
    }
    out
}
