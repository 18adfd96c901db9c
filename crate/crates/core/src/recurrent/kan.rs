//! Kolmogorov–Arnold layer: per-edge B-spline transforms plus a SiLU base
//! path.
//!
//! `output_j = sum_i [ base_w[i,j] * silu(x_i)
//!                   + sum_c spline_w[(i,c), j] * B_c(clamp(x_i)) ]`
//! with the basis evaluated on a uniform grid over [-1, 1]; inputs are
//! clamped to the grid range before basis expansion while the SiLU path
//! sees the raw input.

use std::rc::Rc;

use crate::numerics::{Binding, NumericsError, ParamStore, SplineGrid, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KanSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub grid_size: usize,
    pub spline_order: usize,
}

impl KanSpec {
    pub fn n_basis(&self) -> usize {
        self.grid_size + self.spline_order
    }

    pub fn grid(&self) -> Rc<SplineGrid> {
        Rc::new(SplineGrid::uniform(self.grid_size, self.spline_order))
    }

    pub fn base_weight_name(prefix: &str) -> String {
        format!("{prefix}.base_weight")
    }

    pub fn spline_weight_name(prefix: &str) -> String {
        format!("{prefix}.spline_weight")
    }
}

/// Registers the layer's parameters: Glorot base weights and small uniform
/// spline coefficients.
pub fn register_kan(
    store: &mut ParamStore,
    prefix: &str,
    spec: &KanSpec,
) -> Result<(), NumericsError> {
    store.insert_glorot(
        &KanSpec::base_weight_name(prefix),
        spec.input_dim,
        spec.output_dim,
    )?;
    store.insert_uniform(
        &KanSpec::spline_weight_name(prefix),
        vec![spec.input_dim * spec.n_basis(), spec.output_dim],
        -0.1,
        0.1,
    )?;
    Ok(())
}

/// Applies the layer to `x` (`B x input_dim`) on the tape.
pub fn kan_apply_tape(
    tape: &Tape,
    bind: &Binding,
    prefix: &str,
    grid: &Rc<SplineGrid>,
    x: Var,
) -> Result<Var, NumericsError> {
    let (lo, hi) = grid.support();
    let clamped = tape.clamp(x, lo, hi)?;
    let basis = tape.spline_basis(clamped, grid)?;
    let spline_out = tape.matmul(basis, bind.param(&KanSpec::spline_weight_name(prefix))?)?;
    let base_out = tape.matmul(
        tape.silu(x)?,
        bind.param(&KanSpec::base_weight_name(prefix))?,
    )?;
    tape.add(base_out, spline_out)
}

/// Single-vector inference wrapper.
pub fn kan_layer(
    params: &ParamStore,
    prefix: &str,
    spec: &KanSpec,
    input: &[f64],
) -> Result<Vec<f64>, NumericsError> {
    let tape = Tape::new();
    let bind = Binding::new(&tape, params);
    let x = tape.input(Tensor::new(vec![1, spec.input_dim], input.to_vec())?);
    let out = kan_apply_tape(&tape, &bind, prefix, &spec.grid(), x)?;
    Ok(tape.value(out).values().to_vec())
}
