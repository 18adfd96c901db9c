//! Recurrent Kolmogorov–Arnold cell with dual memory.
//!
//! Each of `L` sublayers projects the input together with its own
//! persistent substate, passes the result through a KAN transform, and
//! updates the substate linearly:
//!
//! ```text
//! s_l   = x * input_kernel_l + sub_l * state_kernel_l
//! phi_l = kan_l(s_l)
//! sub_l = sub_l * state_decay_l + phi_l * state_update_l
//! ```
//!
//! The concatenated sublayer outputs `r = [phi_1; ...; phi_L]` drive the
//! output gate `o = sigmoid(r * outgate + b)` and the cell candidate
//! `cand = tanh(r * candidate + b)`; forget/input gates come from
//! `(x, h_{t-1})` as in the LSTM, and `h_t = o (*) tanh(c_t)`.

use crate::numerics::{Binding, NumericsError, ParamStore, Tape, Tensor, Var};

use super::kan::{kan_apply_tape, register_kan, KanSpec};
use super::{per_timestep_inputs, HiddenSequence, RecurrentError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TkanSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub sublayers: usize,
    pub kan_in: usize,
    pub kan_out: usize,
    pub grid_size: usize,
    pub spline_order: usize,
}

impl TkanSpec {
    pub fn kan_spec(&self) -> KanSpec {
        KanSpec {
            input_dim: self.kan_in,
            output_dim: self.kan_out,
            grid_size: self.grid_size,
            spline_order: self.spline_order,
        }
    }

    /// Width of the concatenated sublayer outputs.
    pub fn concat_width(&self) -> usize {
        self.kan_out * self.sublayers
    }
}

pub fn register_tkan(
    store: &mut ParamStore,
    prefix: &str,
    spec: &TkanSpec,
) -> Result<(), NumericsError> {
    assert!(spec.sublayers >= 1, "TKAN needs at least one sublayer");
    for l in 0..spec.sublayers {
        let sub = format!("{prefix}.sub{l}");
        store.insert_glorot(&format!("{sub}.input_kernel"), spec.input_dim, spec.kan_in)?;
        store.insert_glorot(&format!("{sub}.state_kernel"), spec.kan_out, spec.kan_in)?;
        register_kan(store, &format!("{sub}.kan"), &spec.kan_spec())?;
        store.insert_glorot(&format!("{sub}.state_decay"), spec.kan_out, spec.kan_out)?;
        store.insert_glorot(&format!("{sub}.state_update"), spec.kan_out, spec.kan_out)?;
    }
    for gate in ["forget", "input"] {
        store.insert_glorot(&format!("{prefix}.wx_{gate}"), spec.input_dim, spec.hidden)?;
        store.insert_glorot(&format!("{prefix}.wh_{gate}"), spec.hidden, spec.hidden)?;
        store.insert_zeros(&format!("{prefix}.b_{gate}"), vec![spec.hidden])?;
    }
    store.insert_glorot(
        &format!("{prefix}.candidate_kernel"),
        spec.concat_width(),
        spec.hidden,
    )?;
    store.insert_zeros(&format!("{prefix}.candidate_bias"), vec![spec.hidden])?;
    store.insert_glorot(
        &format!("{prefix}.outgate_kernel"),
        spec.concat_width(),
        spec.hidden,
    )?;
    store.insert_zeros(&format!("{prefix}.outgate_bias"), vec![spec.hidden])?;
    Ok(())
}

pub fn tkan_scan_tape(
    tape: &Tape,
    bind: &Binding,
    prefix: &str,
    spec: &TkanSpec,
    xs: &[Var],
) -> Result<Vec<Var>, NumericsError> {
    let (batch, _) = tape.dims(xs[0]);
    let grid = spec.kan_spec().grid();
    let mut hidden = tape.constant(Tensor::zeros(vec![batch, spec.hidden]));
    let mut cell = tape.constant(Tensor::zeros(vec![batch, spec.hidden]));
    let mut substates: Vec<Var> = (0..spec.sublayers)
        .map(|_| tape.constant(Tensor::zeros(vec![batch, spec.kan_out])))
        .collect();

    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut sublayer_outputs = Vec::with_capacity(spec.sublayers);
        for (l, substate) in substates.iter_mut().enumerate() {
            let sub = format!("{prefix}.sub{l}");
            let projected = tape.add(
                tape.matmul(x, bind.param(&format!("{sub}.input_kernel"))?)?,
                tape.matmul(*substate, bind.param(&format!("{sub}.state_kernel"))?)?,
            )?;
            let transformed =
                kan_apply_tape(tape, bind, &format!("{sub}.kan"), &grid, projected)?;
            *substate = tape.add(
                tape.matmul(*substate, bind.param(&format!("{sub}.state_decay"))?)?,
                tape.matmul(transformed, bind.param(&format!("{sub}.state_update"))?)?,
            )?;
            sublayer_outputs.push(transformed);
        }
        let concat = tape.concat_cols(&sublayer_outputs)?;

        let forget = tape.sigmoid(tape.add_bias(
            tape.add(
                tape.matmul(x, bind.param(&format!("{prefix}.wx_forget"))?)?,
                tape.matmul(hidden, bind.param(&format!("{prefix}.wh_forget"))?)?,
            )?,
            bind.param(&format!("{prefix}.b_forget"))?,
        )?)?;
        let input = tape.sigmoid(tape.add_bias(
            tape.add(
                tape.matmul(x, bind.param(&format!("{prefix}.wx_input"))?)?,
                tape.matmul(hidden, bind.param(&format!("{prefix}.wh_input"))?)?,
            )?,
            bind.param(&format!("{prefix}.b_input"))?,
        )?)?;
        let cand = tape.tanh(tape.add_bias(
            tape.matmul(concat, bind.param(&format!("{prefix}.candidate_kernel"))?)?,
            bind.param(&format!("{prefix}.candidate_bias"))?,
        )?)?;
        let outgate = tape.sigmoid(tape.add_bias(
            tape.matmul(concat, bind.param(&format!("{prefix}.outgate_kernel"))?)?,
            bind.param(&format!("{prefix}.outgate_bias"))?,
        )?)?;

        cell = tape.add(tape.mul(forget, cell)?, tape.mul(input, cand)?)?;
        hidden = tape.mul(outgate, tape.tanh(cell)?)?;
        out.push(hidden);
    }
    Ok(out)
}

/// Single-window inference: `x` is `T x input_dim`.
pub fn tkan_scan(
    params: &ParamStore,
    prefix: &str,
    spec: &TkanSpec,
    x: &Tensor,
) -> Result<HiddenSequence, RecurrentError> {
    let tape = Tape::new();
    let bind = Binding::new(&tape, params);
    let xs = per_timestep_inputs(&tape, x)?;
    let hs = tkan_scan_tape(&tape, &bind, prefix, spec, &xs)?;
    Ok(HiddenSequence(
        hs.iter().map(|&h| tape.value(h).values().to_vec()).collect(),
    ))
}
