//! Allocator models: a recurrent core plus an allocation head, with
//! checkpointing and zero-padded deployment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{
    dynamic_allocate_tape, naive_allocate, register_adjustment_net, register_base_curve,
    register_static_head, static_allocate_tape, AllocationCurve, AllocationError,
};
use crate::numerics::{checkpoint, Binding, NumericsError, ParamStore, Tape, Tensor, Var};
use crate::recurrent::{
    lstm_scan_tape, register_lstm, register_tkan, tkan_scan_tape, LstmSpec, RecurrentError,
    TkanSpec,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Recurrent(#[from] RecurrentError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("deployment starts at the end of the lookback: observed {observed} rows, need {lookback}")]
    DeployTooEarly { observed: usize, lookback: usize },
    #[error("expected {expected} feature rows, got {got}")]
    WrongRowCount { expected: usize, got: usize },
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("checkpoint metadata: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Lstm,
    Tkan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", content = "cell")]
pub enum ModelKind {
    Naive,
    Static(CellKind),
    Dynamic(CellKind),
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Naive,
        ModelKind::Static(CellKind::Lstm),
        ModelKind::Static(CellKind::Tkan),
        ModelKind::Dynamic(CellKind::Lstm),
        ModelKind::Dynamic(CellKind::Tkan),
    ];

    pub fn cell(&self) -> Option<CellKind> {
        match self {
            ModelKind::Naive => None,
            ModelKind::Static(c) | ModelKind::Dynamic(c) => Some(*c),
        }
    }

    /// Row label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Naive => "Naive",
            ModelKind::Static(CellKind::Lstm) => "StaticVWAP with LSTM",
            ModelKind::Static(CellKind::Tkan) => "StaticVWAP with TKAN",
            ModelKind::Dynamic(CellKind::Lstm) => "DynamicVWAP with LSTM",
            ModelKind::Dynamic(CellKind::Tkan) => "DynamicVWAP with TKAN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Naive => "naive",
            ModelKind::Static(CellKind::Lstm) => "static-lstm",
            ModelKind::Static(CellKind::Tkan) => "static-tkan",
            ModelKind::Dynamic(CellKind::Lstm) => "dynamic-lstm",
            ModelKind::Dynamic(CellKind::Tkan) => "dynamic-tkan",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ModelKind::Naive),
            "static-lstm" => Ok(ModelKind::Static(CellKind::Lstm)),
            "static-tkan" => Ok(ModelKind::Static(CellKind::Tkan)),
            "dynamic-lstm" => Ok(ModelKind::Dynamic(CellKind::Lstm)),
            "dynamic-tkan" => Ok(ModelKind::Dynamic(CellKind::Tkan)),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

/// Everything needed to rebuild a model's parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub tkan_sublayers: usize,
    pub kan_in: usize,
    pub kan_out: usize,
    pub kan_grid_size: usize,
    pub kan_spline_order: usize,
    pub adjust_hidden: usize,
}

impl ModelConfig {
    pub fn window_rows(&self) -> usize {
        self.lookback + self.horizon - 1
    }

    /// Builds the curve node (`B x horizon`) for a batch of windows whose
    /// per-timestep inputs are `xs` (each `B x input_dim`). Parameters are
    /// looked up by name through `bind`.
    pub fn curve_tape(&self, tape: &Tape, bind: &Binding, xs: &[Var]) -> Result<Var, NumericsError> {
        let batch = tape.dims(xs[0]).0;
        match self.kind {
            ModelKind::Naive => {
                let uniform = 1.0 / self.horizon as f64;
                Ok(tape.constant(
                    Tensor::filled(vec![batch, self.horizon], uniform).expect("positive dims"),
                ))
            }
            ModelKind::Static(cell) => {
                // Only the lookback prefix feeds the static head; scanning
                // further would waste work without affecting the output.
                let prefix_rows = &xs[..self.lookback];
                let states = self.scan(tape, bind, cell, prefix_rows)?;
                static_allocate_tape(tape, bind, states[self.lookback - 1])
            }
            ModelKind::Dynamic(cell) => {
                let states = self.scan(tape, bind, cell, xs)?;
                let fractions =
                    dynamic_allocate_tape(tape, bind, &states, self.lookback, self.horizon)?;
                tape.concat_cols(&fractions)
            }
        }
    }

    fn scan(
        &self,
        tape: &Tape,
        bind: &Binding,
        cell: CellKind,
        xs: &[Var],
    ) -> Result<Vec<Var>, NumericsError> {
        match cell {
            CellKind::Lstm => lstm_scan_tape(tape, bind, LSTM_PREFIX, &self.lstm_spec(), xs),
            CellKind::Tkan => tkan_scan_tape(tape, bind, TKAN_PREFIX, &self.tkan_spec(), xs),
        }
    }

    fn lstm_spec(&self) -> LstmSpec {
        LstmSpec {
            input_dim: self.input_dim,
            hidden: self.hidden,
        }
    }

    fn tkan_spec(&self) -> TkanSpec {
        TkanSpec {
            input_dim: self.input_dim,
            hidden: self.hidden,
            sublayers: self.tkan_sublayers,
            kan_in: self.kan_in,
            kan_out: self.kan_out,
            grid_size: self.kan_grid_size,
            spline_order: self.kan_spline_order,
        }
    }
}

const LSTM_PREFIX: &str = "recurrent.lstm";
const TKAN_PREFIX: &str = "recurrent.tkan";

/// A model instance: configuration plus parameters. Frozen instances are
/// safe for concurrent read-only inference.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        match config.kind {
            ModelKind::Naive => {}
            ModelKind::Static(cell) => {
                register_cell(&mut params, cell, &config)?;
                register_static_head(&mut params, config.hidden, config.horizon)?;
            }
            ModelKind::Dynamic(cell) => {
                register_cell(&mut params, cell, &config)?;
                register_base_curve(&mut params, config.horizon)?;
                register_adjustment_net(
                    &mut params,
                    config.horizon,
                    config.hidden,
                    config.adjust_hidden,
                )?;
            }
        }
        Ok(Self { config, params })
    }

    /// Builds the curve node (`B x horizon`) for a batch of windows whose
    /// per-timestep inputs are `xs` (each `B x input_dim`).
    pub fn curve_tape(
        &self,
        tape: &Tape,
        bind: &Binding,
        xs: &[Var],
    ) -> Result<Var, NumericsError> {
        self.config.curve_tape(tape, bind, xs)
    }

    /// Full-information allocation for one window (`window_rows x input_dim`).
    pub fn allocate(&self, features: &Tensor) -> Result<AllocationCurve, ModelError> {
        let (rows, _) = features.dims2();
        if rows != self.config.window_rows() {
            return Err(ModelError::WrongRowCount {
                expected: self.config.window_rows(),
                got: rows,
            });
        }
        let curves = self.allocate_rows(std::slice::from_ref(features))?;
        let curve = AllocationCurve(curves.row(0).to_vec());
        curve.validate()?;
        Ok(curve)
    }

    /// Batched allocation: one feature matrix per window, all with the
    /// full `window_rows` rows. Returns a `B x horizon` matrix.
    pub fn allocate_rows(&self, windows: &[Tensor]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.params);
        let xs = batch_timestep_inputs(&tape, windows, self.config.window_rows())?;
        let curve = self.curve_tape(&tape, &bind, &xs)?;
        Ok(tape.value(curve))
    }

    /// Deployment with a zero-padded future: `observed` holds the feature
    /// rows seen so far (at least `lookback`). Returns every allocation
    /// already decided, in execution order; once `horizon - 1` steps are
    /// decided the remainder is included, completing the curve.
    pub fn deploy_step(&self, observed: &Tensor) -> Result<Vec<f64>, ModelError> {
        let (observed_rows, cols) = observed.dims2();
        let rows = self.config.window_rows();
        if observed_rows < self.config.lookback {
            return Err(ModelError::DeployTooEarly {
                observed: observed_rows,
                lookback: self.config.lookback,
            });
        }
        if observed_rows > rows || cols != self.config.input_dim {
            return Err(ModelError::WrongRowCount {
                expected: rows,
                got: observed_rows,
            });
        }
        let mut padded = vec![0.0; rows * self.config.input_dim];
        padded[..observed_rows * self.config.input_dim]
            .copy_from_slice(&observed.values()[..observed_rows * self.config.input_dim]);
        let full = Tensor::new(vec![rows, self.config.input_dim], padded)?;
        let curve = self.allocate(&full)?;

        let decided = match self.config.kind {
            // A fixed curve is fully decided at the lookback boundary.
            ModelKind::Naive | ModelKind::Static(_) => self.config.horizon,
            ModelKind::Dynamic(_) => {
                let steps = (observed_rows - self.config.lookback + 1)
                    .min(self.config.horizon - 1);
                if steps == self.config.horizon - 1 {
                    self.config.horizon
                } else {
                    steps
                }
            }
        };
        Ok(curve.0[..decided].to_vec())
    }

    pub fn naive_curve(&self) -> AllocationCurve {
        naive_allocate(self.config.horizon)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let meta = serde_json::to_value(&self.config)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        checkpoint::save(&self.params, meta, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (params, meta) = checkpoint::load(path)?;
        let config: ModelConfig = serde_json::from_value(meta)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        Ok(Self { config, params })
    }
}

fn register_cell(
    params: &mut ParamStore,
    cell: CellKind,
    config: &ModelConfig,
) -> Result<(), NumericsError> {
    match cell {
        CellKind::Lstm => register_lstm(params, LSTM_PREFIX, &config.lstm_spec()),
        CellKind::Tkan => register_tkan(params, TKAN_PREFIX, &config.tkan_spec()),
    }
}

/// Stacks row `t` of each window into a `B x input_dim` input node, for
/// every timestep `t`.
pub fn batch_timestep_inputs(
    tape: &Tape,
    windows: &[Tensor],
    rows: usize,
) -> Result<Vec<Var>, NumericsError> {
    let cols = windows[0].dims2().1;
    let mut out = Vec::with_capacity(rows);
    for t in 0..rows {
        let mut values = Vec::with_capacity(windows.len() * cols);
        for w in windows {
            values.extend_from_slice(w.row(t));
        }
        out.push(tape.input(Tensor::new(vec![windows.len(), cols], values)?));
    }
    Ok(out)
}
