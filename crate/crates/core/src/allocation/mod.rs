//! Simplex-constrained execution curves.
//!
//! The dynamic allocator multiplies a learnable base curve (softmax over
//! logits, so the simplex constraints hold by construction) by per-step
//! adjustment factors `alpha = 1 + tanh(f_i(...)) in [0, 2]`, where each
//! `f_i` is a two-hidden-layer ReLU MLP reading the causal hidden state
//! for that step together with all previously decided fractions. Each
//! step is clipped to the remaining capacity `1 - sum(previous)` and the
//! final step takes the remainder, so every output sums to one with
//! non-negative entries.

use thiserror::Error;

use crate::numerics::{Binding, NumericsError, ParamStore, Tape, Tensor, Var};
use crate::recurrent::HiddenSequence;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("hidden sequence has {got} states, need at least {needed}")]
    HiddenTooShort { got: usize, needed: usize },
    #[error("allocation violates the simplex: {0}")]
    Simplex(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A length-`h` vector on the probability simplex: the fraction of the
/// order executed in each horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationCurve(pub Vec<f64>);

impl AllocationCurve {
    pub fn validate(&self) -> Result<(), AllocationError> {
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AllocationError::Simplex(format!("sum {} != 1", sum)));
        }
        if let Some(&min) = self
            .0
            .iter()
            .min_by(|a, b| a.partial_cmp(b).expect("finite"))
        {
            if min < -1e-12 {
                return Err(AllocationError::Simplex(format!("negative entry {min}")));
            }
        }
        Ok(())
    }
}

pub const BASE_LOGITS: &str = "allocation.base.logits";
pub const STATIC_HEAD_WEIGHT: &str = "allocation.static_head.weight";
pub const STATIC_HEAD_BIAS: &str = "allocation.static_head.bias";

pub fn adjust_param(mlp: usize, tensor: &str) -> String {
    format!("allocation.adjust.{mlp}.{tensor}")
}

/// Registers the base-curve logits, zero-initialized so the exposed curve
/// starts uniform at 1/h.
pub fn register_base_curve(
    store: &mut ParamStore,
    horizon: usize,
) -> Result<(), NumericsError> {
    store.insert_zeros(BASE_LOGITS, vec![horizon])
}

/// Registers the `h - 1` adjustment MLPs. MLP `i` consumes the hidden
/// state (width `hidden`) plus `i` previously decided fractions.
pub fn register_adjustment_net(
    store: &mut ParamStore,
    horizon: usize,
    hidden: usize,
    mlp_hidden: usize,
) -> Result<(), NumericsError> {
    for i in 0..horizon - 1 {
        let input = hidden + i;
        store.insert_glorot(&adjust_param(i, "w1"), input, mlp_hidden)?;
        store.insert_zeros(&adjust_param(i, "b1"), vec![mlp_hidden])?;
        store.insert_glorot(&adjust_param(i, "w2"), mlp_hidden, mlp_hidden)?;
        store.insert_zeros(&adjust_param(i, "b2"), vec![mlp_hidden])?;
        store.insert_glorot(&adjust_param(i, "w3"), mlp_hidden, 1)?;
        store.insert_zeros(&adjust_param(i, "b3"), vec![1])?;
    }
    Ok(())
}

pub fn register_static_head(
    store: &mut ParamStore,
    hidden: usize,
    horizon: usize,
) -> Result<(), NumericsError> {
    store.insert_glorot(STATIC_HEAD_WEIGHT, hidden, horizon)?;
    store.insert_zeros(STATIC_HEAD_BIAS, vec![horizon])
}

/// One step of the clipped recurrence:
/// `v = clip(alpha * base[idx], 0, remaining)`, returning the fraction and
/// the updated remaining capacity.
fn clip_step(
    tape: &Tape,
    alpha: Var,
    base: Var,
    idx: usize,
    remaining: Var,
) -> Result<(Var, Var), NumericsError> {
    let base_i = tape.slice_cols(base, idx, idx + 1)?;
    let candidate = tape.relu(tape.mul_scalar(alpha, base_i)?)?;
    let clipped = tape.minimum(candidate, remaining)?;
    let new_remaining = tape.sub(remaining, clipped)?;
    Ok((clipped, new_remaining))
}

/// The clipped sequential recurrence: given per-step adjustment factors
/// (`h - 1` nodes of shape `B x 1`) and the base curve (`1 x h` simplex),
/// produces `h` fraction columns. Step `i` is
/// `clip(alpha_i * base_i, 0, 1 - sum(previous))`; the final step takes
/// the remainder, so conservation is structural.
pub fn clipped_allocation_tape(
    tape: &Tape,
    alphas: &[Var],
    base: Var,
    batch: usize,
) -> Result<Vec<Var>, NumericsError> {
    let horizon = tape.dims(base).1;
    debug_assert_eq!(alphas.len(), horizon - 1);
    let mut remaining = tape.constant(Tensor::filled(vec![batch, 1], 1.0)?);
    let mut fractions = Vec::with_capacity(horizon);
    for (idx, &alpha) in alphas.iter().enumerate() {
        let (clipped, rest) = clip_step(tape, alpha, base, idx, remaining)?;
        remaining = rest;
        fractions.push(clipped);
    }
    fractions.push(remaining);
    Ok(fractions)
}

/// Adjustment factor for step `i` (0-based MLP index): `B x 1` node in
/// `[0, 2]` computed from the hidden state and previous fractions.
pub fn adjustment_factor_tape(
    tape: &Tape,
    bind: &Binding,
    mlp: usize,
    hidden_state: Var,
    previous: &[Var],
) -> Result<Var, NumericsError> {
    let input = if previous.is_empty() {
        hidden_state
    } else {
        let mut parts = vec![hidden_state];
        parts.extend_from_slice(previous);
        tape.concat_cols(&parts)?
    };
    let a1 = tape.relu(tape.add_bias(
        tape.matmul(input, bind.param(&adjust_param(mlp, "w1"))?)?,
        bind.param(&adjust_param(mlp, "b1"))?,
    )?)?;
    let a2 = tape.relu(tape.add_bias(
        tape.matmul(a1, bind.param(&adjust_param(mlp, "w2"))?)?,
        bind.param(&adjust_param(mlp, "b2"))?,
    )?)?;
    let raw = tape.add_bias(
        tape.matmul(a2, bind.param(&adjust_param(mlp, "w3"))?)?,
        bind.param(&adjust_param(mlp, "b3"))?,
    )?;
    tape.add_const(tape.tanh(raw)?, 1.0)
}

/// Dynamic allocation over a scanned hidden sequence (`B x hidden` node
/// per timestep). Decision `i` (1-based) reads hidden index
/// `lookback + i - 2` (0-based), i.e. the state at the end of the lookback
/// for the first step and each realized horizon bar thereafter.
pub fn dynamic_allocate_tape(
    tape: &Tape,
    bind: &Binding,
    hidden_states: &[Var],
    lookback: usize,
    horizon: usize,
) -> Result<Vec<Var>, NumericsError> {
    let batch = tape.dims(hidden_states[0]).0;
    let base = tape.softmax(bind.param(BASE_LOGITS)?)?;
    let mut previous: Vec<Var> = Vec::new();
    let mut fractions = Vec::with_capacity(horizon);

    // The recurrence interleaves with alpha computation because MLP i
    // consumes the fractions decided before it.
    let mut remaining = tape.constant(Tensor::filled(vec![batch, 1], 1.0)?);
    for i in 0..horizon - 1 {
        let state = hidden_states[lookback + i - 1];
        let alpha = adjustment_factor_tape(tape, bind, i, state, &previous)?;
        let (clipped, rest) = clip_step(tape, alpha, base, i, remaining)?;
        remaining = rest;
        previous.push(clipped);
        fractions.push(clipped);
    }
    fractions.push(remaining);
    Ok(fractions)
}

/// Static head: softmax of a dense readout of the hidden state at the end
/// of the lookback. The curve is fixed at execution start.
pub fn static_allocate_tape(
    tape: &Tape,
    bind: &Binding,
    lookback_state: Var,
) -> Result<Var, NumericsError> {
    tape.softmax(tape.add_bias(
        tape.matmul(lookback_state, bind.param(STATIC_HEAD_WEIGHT)?)?,
        bind.param(STATIC_HEAD_BIAS)?,
    )?)
}

/// Uniform benchmark curve.
pub fn naive_allocate(horizon: usize) -> AllocationCurve {
    assert!(horizon >= 1);
    AllocationCurve(vec![1.0 / horizon as f64; horizon])
}

/// Spec-level wrapper: run the dynamic allocator over an existing hidden
/// sequence with the given parameters (single window).
pub fn dynamic_allocate(
    params: &ParamStore,
    hidden: &HiddenSequence,
    lookback: usize,
    horizon: usize,
) -> Result<AllocationCurve, AllocationError> {
    let needed = lookback + horizon - 2;
    if hidden.0.len() < needed {
        return Err(AllocationError::HiddenTooShort {
            got: hidden.0.len(),
            needed,
        });
    }
    let tape = Tape::new();
    let bind = Binding::new(&tape, params);
    let states: Vec<Var> = hidden
        .0
        .iter()
        .map(|row| {
            Ok(tape.input(Tensor::new(vec![1, row.len()], row.clone())?))
        })
        .collect::<Result<_, NumericsError>>()?;
    let fractions = dynamic_allocate_tape(&tape, &bind, &states, lookback, horizon)?;
    let curve = AllocationCurve(
        fractions
            .iter()
            .map(|&v| tape.value_scalar(v))
            .collect(),
    );
    curve.validate()?;
    Ok(curve)
}

/// Spec-level wrapper for the static head (single window).
pub fn static_allocate(
    params: &ParamStore,
    hidden: &HiddenSequence,
    lookback: usize,
) -> Result<AllocationCurve, AllocationError> {
    if hidden.0.len() < lookback {
        return Err(AllocationError::HiddenTooShort {
            got: hidden.0.len(),
            needed: lookback,
        });
    }
    let tape = Tape::new();
    let bind = Binding::new(&tape, params);
    let state_row = &hidden.0[lookback - 1];
    let state = tape.input(Tensor::new(vec![1, state_row.len()], state_row.clone())?);
    let curve_node = static_allocate_tape(&tape, &bind, state)?;
    let curve = AllocationCurve(tape.value(curve_node).values().to_vec());
    curve.validate()?;
    Ok(curve)
}
