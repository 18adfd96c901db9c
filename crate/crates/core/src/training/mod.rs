//! Mini-batch training with early stopping, learning-rate reduction, and
//! a multi-seed experiment runner.

pub mod callbacks;
pub mod report;

pub use callbacks::{Callbacks, EpochOutcome};
pub use report::{aggregate, format_report_table, write_report_csv, ReportRow, RunRecord};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::WindowSet;
use crate::model::{Model, ModelConfig, ModelError, ModelKind};
use crate::numerics::{forward_backward, forward_value, AdamState, NumericsError, Var};
use crate::objectives::{evaluate_model, loss_tape, Evaluation, LossKind, ObjectivesError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training and validation sets must be non-empty")]
    EmptySet,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objectives(#[from] ObjectivesError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    pub lr_floor: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 1000,
            initial_lr: 0.001,
            early_stop_patience: 10,
            early_stop_min_delta: 0.00001,
            lr_reduce_patience: 5,
            lr_reduce_factor: 0.25,
            lr_floor: 0.000025,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.batch_size >= 1
            && self.max_epochs >= 1
            && self.initial_lr > 0.0
            && self.early_stop_patience >= 1
            && self.lr_reduce_patience >= 1
            && self.lr_reduce_factor > 0.0
            && self.lr_reduce_factor < 1.0
            && self.lr_floor > 0.0
            && !self.seeds.is_empty();
        if ok {
            Ok(())
        } else {
            Err(TrainError::BadConfig(
                "batch size, epochs and patience must be >= 1; learning rates positive; \
                 0 < reduce factor < 1; at least one seed"
                    .into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub train_seconds: f64,
}

// Separate stream from parameter initialization so that adding or removing
// draws in one never perturbs the other.
const SHUFFLE_STREAM_SALT: u64 = 0x5348_5546;

/// Trains a model of `model_config.kind` on `train_set`, monitoring the
/// same loss kind on `validation_set`. Deterministic given `seed`: best
/// parameters (by validation loss) are restored at the end.
pub fn train(
    model_config: &ModelConfig,
    loss: LossKind,
    train_set: &WindowSet,
    validation_set: &WindowSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(TrainError::EmptySet);
    }
    let started = Instant::now();
    let mut model = Model::new(model_config.clone(), seed)?;

    if model_config.kind == ModelKind::Naive {
        let best_val_loss = validation_loss(&model, loss, validation_set, cfg.batch_size)?;
        return Ok(TrainOutcome {
            model,
            history: Vec::new(),
            best_val_loss,
            epochs_run: 0,
            train_seconds: started.elapsed().as_secs_f64(),
        });
    }

    let mut adam = AdamState::new(cfg.initial_lr, cfg.lr_floor);
    let mut callbacks = Callbacks::new(
        cfg.early_stop_min_delta,
        cfg.early_stop_patience,
        cfg.lr_reduce_patience,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM_SALT);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best_snapshot = None;
    let mut best_val_loss = f64::INFINITY;

    'epochs: for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_weighted_sum = 0.0;
        for (batch_index, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grads();
            let (prices, fracs) = train_set.batch_targets(chunk);
            let rows = model_config.window_rows();
            let config = &model.config;
            let batch_loss = forward_backward(&mut model.params, |tape, bind| {
                let xs: Vec<Var> = (0..rows)
                    .map(|t| tape.input(train_set.batch_rows(chunk, t)))
                    .collect();
                let curve = config.curve_tape(tape, bind, &xs)?;
                let prices = tape.constant(prices.clone());
                let fracs = tape.constant(fracs.clone());
                loss_tape(tape, loss, curve, prices, fracs)
            })?;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            adam.apply(&mut model.params)?;
            loss_weighted_sum += batch_loss * chunk.len() as f64;
        }
        let train_loss = loss_weighted_sum / train_set.len() as f64;
        let val_loss = validation_loss(&model, loss, validation_set, cfg.batch_size)?;

        let outcome = callbacks.observe(val_loss);
        if outcome.improved {
            best_snapshot = Some(model.params.snapshot());
            best_val_loss = val_loss;
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            learning_rate: adam.learning_rate(),
        });
        if outcome.reduce_lr {
            adam.reduce_learning_rate(cfg.lr_reduce_factor);
        }
        if outcome.stop {
            break 'epochs;
        }
    }

    if let Some(snapshot) = &best_snapshot {
        model.params.restore(snapshot)?;
    }
    let epochs_run = history.len();
    Ok(TrainOutcome {
        model,
        history,
        best_val_loss,
        epochs_run,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Mean loss of the model over a whole window set, batched.
pub fn validation_loss(
    model: &Model,
    loss: LossKind,
    set: &WindowSet,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet);
    }
    let rows = model.config.window_rows();
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut weighted = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (prices, fracs) = set.batch_targets(chunk);
        let config = &model.config;
        let batch = forward_value(&model.params, |tape, bind| {
            let xs: Vec<Var> = (0..rows)
                .map(|t| tape.input(set.batch_rows(chunk, t)))
                .collect();
            let curve = config.curve_tape(tape, bind, &xs)?;
            let prices = tape.constant(prices.clone());
            let fracs = tape.constant(fracs.clone());
            loss_tape(tape, loss, curve, prices, fracs)
        })?;
        weighted += batch * chunk.len() as f64;
    }
    Ok(weighted / set.len() as f64)
}

/// One grid cell of an experiment: a model kind, an optimization loss
/// (`None` for the parameter-free naive benchmark), and a seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub kind: ModelKind,
    pub loss: Option<LossKind>,
    pub seed: u64,
}

/// Expands the grid: the naive benchmark ignores the loss axis.
pub fn experiment_grid(
    kinds: &[ModelKind],
    losses: &[LossKind],
    seeds: &[u64],
) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &kind in kinds {
        if kind == ModelKind::Naive {
            for &seed in seeds {
                specs.push(RunSpec {
                    kind,
                    loss: None,
                    seed,
                });
            }
        } else {
            for &loss in losses {
                for &seed in seeds {
                    specs.push(RunSpec {
                        kind,
                        loss: Some(loss),
                        seed,
                    });
                }
            }
        }
    }
    specs
}

#[derive(Debug)]
pub struct RunFailure {
    pub spec: RunSpec,
    pub error: String,
}

#[derive(Debug)]
pub struct CompletedRun {
    pub spec: RunSpec,
    pub record: RunRecord,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Trains and evaluates every grid cell, fanning out across `jobs`
/// worker threads (each run is single-threaded and owns its model).
/// Failures are collected rather than aborting the grid; completed runs
/// come back sorted by (kind, loss, seed) regardless of scheduling.
pub fn run_experiment(
    base_config: &ModelConfig,
    specs: &[RunSpec],
    train_set: &WindowSet,
    validation_set: &WindowSet,
    test_set: &WindowSet,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> (Vec<CompletedRun>, Vec<RunFailure>) {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let next = AtomicUsize::new(0);
    let completed = Mutex::new(Vec::new());
    let failures = Mutex::new(Vec::new());
    let jobs = jobs.max(1).min(specs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let spec = specs[i];
                match run_one(base_config, spec, train_set, validation_set, test_set, train_cfg)
                {
                    Ok(run) => completed.lock().expect("poisoned").push(run),
                    Err(e) => failures.lock().expect("poisoned").push(RunFailure {
                        spec,
                        error: e.to_string(),
                    }),
                }
            });
        }
    });

    let mut completed = completed.into_inner().expect("poisoned");
    let mut failures = failures.into_inner().expect("poisoned");
    let order = |s: &RunSpec| {
        let kind_rank = ModelKind::ALL.iter().position(|k| *k == s.kind).unwrap_or(9);
        let loss_rank = s
            .loss
            .map(|l| LossKind::ALL.iter().position(|k| *k == l).unwrap_or(9))
            .unwrap_or(0);
        (kind_rank, loss_rank, s.seed)
    };
    completed.sort_by_key(|r| order(&r.spec));
    failures.sort_by_key(|f| order(&f.spec));
    (completed, failures)
}

fn run_one(
    base_config: &ModelConfig,
    spec: RunSpec,
    train_set: &WindowSet,
    validation_set: &WindowSet,
    test_set: &WindowSet,
    train_cfg: &TrainConfig,
) -> Result<CompletedRun, TrainError> {
    let mut config = base_config.clone();
    config.kind = spec.kind;
    let loss = spec.loss.unwrap_or(LossKind::Absolute);
    let outcome = train(&config, loss, train_set, validation_set, train_cfg, spec.seed)?;
    let evaluation = evaluate_model(&outcome.model, test_set, train_cfg.batch_size)?;
    let record = RunRecord {
        format_version: report::RUN_RECORD_FORMAT_VERSION,
        model: spec.kind.to_string(),
        asset: test_set.asset.clone(),
        loss: spec.loss.map(|l| l.to_string()),
        seed: spec.seed,
        metrics: evaluation.metrics,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.epochs_run,
        train_seconds: if spec.kind == ModelKind::Naive {
            0.0
        } else {
            outcome.train_seconds
        },
        degenerate_windows: test_set.degenerate_windows,
    };
    Ok(CompletedRun {
        spec,
        record,
        outcome,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_features, FeatureConfig};
    use crate::market_data::{generate_synthetic, split, SplitSpec, SynthSpec};
    use crate::model::CellKind;

    fn tiny_sets() -> (WindowSet, WindowSet, WindowSet, FeatureConfig) {
        let spec = SynthSpec::default();
        let series = generate_synthetic(&spec, 1400, 77).unwrap();
        let fcfg = FeatureConfig {
            lookback: 6,
            horizon: 3,
            rolling_window: 24,
        };
        let (train_s, val_s, test_s) =
            split(&series, &SplitSpec::default(), fcfg.min_series_len()).unwrap();
        (
            build_features(&train_s, &fcfg).unwrap(),
            build_features(&val_s, &fcfg).unwrap(),
            build_features(&test_s, &fcfg).unwrap(),
            fcfg,
        )
    }

    fn tiny_model_config(fcfg: &FeatureConfig, kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            lookback: fcfg.lookback,
            horizon: fcfg.horizon,
            input_dim: crate::features::FEATURE_DIM,
            hidden: 4,
            tkan_sublayers: 1,
            kan_in: 2,
            kan_out: 2,
            kan_grid_size: 5,
            kan_spline_order: 3,
            adjust_hidden: 4,
        }
    }

    fn fast_cfg(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_reproduces_history_and_parameters() {
        let (train_set, val_set, _, fcfg) = tiny_sets();
        let config = tiny_model_config(&fcfg, ModelKind::Dynamic(CellKind::Lstm));
        let run = |seed| {
            train(
                &config,
                LossKind::Absolute,
                &train_set,
                &val_set,
                &fast_cfg(2),
                seed,
            )
            .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
        for ((n1, v1, _), (n2, v2, _)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(n1, n2);
            for (a, b) in v1.values().iter().zip(v2.values()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{n1}");
            }
        }
        let c = run(43);
        assert_ne!(
            a.history[0].train_loss.to_bits(),
            c.history[0].train_loss.to_bits()
        );
    }

    #[test]
    fn restored_parameters_reproduce_best_validation_loss() {
        let (train_set, val_set, _, fcfg) = tiny_sets();
        let config = tiny_model_config(&fcfg, ModelKind::Dynamic(CellKind::Lstm));
        let out = train(
            &config,
            LossKind::VolumeCurve,
            &train_set,
            &val_set,
            &fast_cfg(3),
            7,
        )
        .unwrap();
        let re_eval = validation_loss(&out.model, LossKind::VolumeCurve, &val_set, 64).unwrap();
        assert_eq!(re_eval.to_bits(), out.best_val_loss.to_bits());
        let recorded_best = out
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(recorded_best.to_bits(), out.best_val_loss.to_bits());
    }

    #[test]
    fn naive_runs_are_instant_and_seed_independent() {
        let (train_set, val_set, test_set, fcfg) = tiny_sets();
        let config = tiny_model_config(&fcfg, ModelKind::Naive);
        let specs = experiment_grid(&[ModelKind::Naive], &LossKind::ALL, &[1, 2]);
        assert_eq!(specs.len(), 2); // loss axis collapsed
        let (completed, failures) = run_experiment(
            &config,
            &specs,
            &train_set,
            &val_set,
            &test_set,
            &fast_cfg(1),
            2,
        );
        assert!(failures.is_empty());
        assert_eq!(completed.len(), 2);
        assert_eq!(completed[0].record.train_seconds, 0.0);
        assert_eq!(completed[0].record.epochs_run, 0);
        assert_eq!(
            completed[0].record.metrics.abs_vwap_loss.to_bits(),
            completed[1].record.metrics.abs_vwap_loss.to_bits()
        );
        assert_eq!(completed[0].record.loss, None);
    }

    #[test]
    fn full_grid_completes_under_the_desk_scale_budget() {
        // 2 cells x 2 model families x 3 losses on a small synthetic set.
        let started = std::time::Instant::now();
        let (train_set, val_set, test_set, fcfg) = tiny_sets();
        let config = tiny_model_config(&fcfg, ModelKind::Dynamic(CellKind::Lstm));
        let kinds = [
            ModelKind::Static(CellKind::Lstm),
            ModelKind::Static(CellKind::Tkan),
            ModelKind::Dynamic(CellKind::Lstm),
            ModelKind::Dynamic(CellKind::Tkan),
        ];
        let specs = experiment_grid(&kinds, &LossKind::ALL, &[1]);
        assert_eq!(specs.len(), 12);
        let (completed, failures) = run_experiment(
            &config,
            &specs,
            &train_set,
            &val_set,
            &test_set,
            &fast_cfg(1),
            2,
        );
        assert!(failures.is_empty(), "{failures:?}");
        assert_eq!(completed.len(), 12);
        let rows = aggregate(&completed.iter().map(|r| r.record.clone()).collect::<Vec<_>>());
        assert_eq!(rows.len(), 12);
        let secs = started.elapsed().as_secs_f64();
        assert!(secs < 120.0, "grid took {secs:.1}s");
    }

    #[test]
    fn learning_rate_schedule_is_non_increasing_and_floored() {
        let mut adam = AdamState::new(0.001, 0.000025);
        let mut last = adam.learning_rate();
        for _ in 0..12 {
            let lr = adam.reduce_learning_rate(0.25);
            assert!(lr <= last);
            assert!(lr >= 0.000025);
            last = lr;
        }
        assert_eq!(last, 0.000025);
    }
}
