//! Recurrent cores producing causal hidden-state sequences.

pub mod kan;
pub mod lstm;
pub mod tkan;

pub use kan::{kan_apply_tape, kan_layer, register_kan, KanSpec};
pub use lstm::{lstm_scan, lstm_scan_tape, register_lstm, LstmSpec};
pub use tkan::{register_tkan, tkan_scan, tkan_scan_tape, TkanSpec};

use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Per-timestep hidden vectors; entry `t` is a function of inputs up to
/// and including timestep `t` only.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence(pub Vec<Vec<f64>>);

#[derive(Debug, Error)]
pub enum RecurrentError {
    #[error("non-finite input at timestep {timestep}")]
    NonFiniteInput { timestep: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Splits a `T x d` window into one `1 x d` input node per timestep,
/// reporting the timestep index of any non-finite row.
pub(crate) fn per_timestep_inputs(
    tape: &Tape,
    x: &Tensor,
) -> Result<Vec<Var>, RecurrentError> {
    let (rows, cols) = x.dims2();
    let mut out = Vec::with_capacity(rows);
    for t in 0..rows {
        let row = x.row(t).to_vec();
        let tensor = Tensor::new(vec![1, cols], row)
            .map_err(|_| RecurrentError::NonFiniteInput { timestep: t })?;
        out.push(tape.input(tensor));
    }
    Ok(out)
}
