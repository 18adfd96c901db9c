//! LSTM cell: sigmoid forget/input/output gates, tanh candidate,
//! `c_t = f (*) c_{t-1} + i (*) cand`, `h_t = o (*) tanh(c_t)`.

use crate::numerics::{Binding, NumericsError, ParamStore, Tape, Tensor, Var};

use super::{per_timestep_inputs, HiddenSequence, RecurrentError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden: usize,
}

const GATES: [&str; 4] = ["forget", "input", "cell", "outgate"];

pub fn register_lstm(
    store: &mut ParamStore,
    prefix: &str,
    spec: &LstmSpec,
) -> Result<(), NumericsError> {
    for gate in GATES {
        store.insert_glorot(&format!("{prefix}.wx_{gate}"), spec.input_dim, spec.hidden)?;
        store.insert_glorot(&format!("{prefix}.wh_{gate}"), spec.hidden, spec.hidden)?;
        store.insert_zeros(&format!("{prefix}.b_{gate}"), vec![spec.hidden])?;
    }
    Ok(())
}

fn gate_preactivation(
    tape: &Tape,
    bind: &Binding,
    prefix: &str,
    gate: &str,
    x: Var,
    h: Var,
) -> Result<Var, NumericsError> {
    let from_input = tape.matmul(x, bind.param(&format!("{prefix}.wx_{gate}"))?)?;
    let from_hidden = tape.matmul(h, bind.param(&format!("{prefix}.wh_{gate}"))?)?;
    tape.add_bias(
        tape.add(from_input, from_hidden)?,
        bind.param(&format!("{prefix}.b_{gate}"))?,
    )
}

/// Scans `xs` (one `B x input_dim` node per timestep) starting from zero
/// hidden and cell state, returning the hidden state after each timestep.
pub fn lstm_scan_tape(
    tape: &Tape,
    bind: &Binding,
    prefix: &str,
    spec: &LstmSpec,
    xs: &[Var],
) -> Result<Vec<Var>, NumericsError> {
    let (batch, _) = tape.dims(xs[0]);
    let mut hidden = tape.constant(Tensor::zeros(vec![batch, spec.hidden]));
    let mut cell = tape.constant(Tensor::zeros(vec![batch, spec.hidden]));
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let forget = tape.sigmoid(gate_preactivation(tape, bind, prefix, "forget", x, hidden)?)?;
        let input = tape.sigmoid(gate_preactivation(tape, bind, prefix, "input", x, hidden)?)?;
        let cand = tape.tanh(gate_preactivation(tape, bind, prefix, "cell", x, hidden)?)?;
        let outgate =
            tape.sigmoid(gate_preactivation(tape, bind, prefix, "outgate", x, hidden)?)?;
        cell = tape.add(tape.mul(forget, cell)?, tape.mul(input, cand)?)?;
        hidden = tape.mul(outgate, tape.tanh(cell)?)?;
        out.push(hidden);
    }
    Ok(out)
}

/// Single-window inference: `x` is `T x input_dim`.
pub fn lstm_scan(
    params: &ParamStore,
    prefix: &str,
    spec: &LstmSpec,
    x: &Tensor,
) -> Result<HiddenSequence, RecurrentError> {
    let tape = Tape::new();
    let bind = Binding::new(&tape, params);
    let xs = per_timestep_inputs(&tape, x)?;
    let hs = lstm_scan_tape(&tape, &bind, prefix, spec, &xs)?;
    Ok(HiddenSequence(
        hs.iter().map(|&h| tape.value(h).values().to_vec()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_store(spec: &LstmSpec) -> ParamStore {
        let mut p = ParamStore::new(0);
        register_lstm(&mut p, "lstm", spec).unwrap();
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for name in names {
            let shape = p.value(&name).unwrap().shape().to_vec();
            p.set_value(&name, Tensor::zeros(shape)).unwrap();
        }
        p
    }

    #[test]
    fn zero_weights_give_zero_hidden_states() {
        // Every gate is sigmoid(0) = 0.5 and the candidate tanh(0) = 0, so
        // from c_0 = 0 the cell stays at 0 and h stays at 0.
        let spec = LstmSpec {
            input_dim: 3,
            hidden: 4,
        };
        let p = zero_store(&spec);
        let x = Tensor::new(
            vec![5, 3],
            (0..15).map(|i| (i as f64) * 0.1 - 0.7).collect(),
        )
        .unwrap();
        let hs = lstm_scan(&p, "lstm", &spec, &x).unwrap();
        assert_eq!(hs.0.len(), 5);
        for h in &hs.0 {
            assert_eq!(h, &vec![0.0; 4]);
        }
    }

    #[test]
    fn scalar_single_step_matches_hand_evaluation() {
        let spec = LstmSpec {
            input_dim: 1,
            hidden: 1,
        };
        let mut p = zero_store(&spec);
        let set = |p: &mut ParamStore, name: &str, v: f64, shape: Vec<usize>| {
            p.set_value(name, Tensor::new(shape, vec![v]).unwrap()).unwrap();
        };
        set(&mut p, "lstm.wx_forget", 0.1, vec![1, 1]);
        set(&mut p, "lstm.b_forget", -0.1, vec![1]);
        set(&mut p, "lstm.wx_input", 0.2, vec![1, 1]);
        set(&mut p, "lstm.b_input", 0.05, vec![1]);
        set(&mut p, "lstm.wx_cell", 0.3, vec![1, 1]);
        set(&mut p, "lstm.b_cell", 0.1, vec![1]);
        set(&mut p, "lstm.wx_outgate", 0.4, vec![1, 1]);
        set(&mut p, "lstm.b_outgate", -0.2, vec![1]);

        let x0 = 0.5f64;
        let x = Tensor::new(vec![1, 1], vec![x0]).unwrap();
        let hs = lstm_scan(&p, "lstm", &spec, &x).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i_gate = sig(0.2 * x0 + 0.05);
        let cand = (0.3 * x0 + 0.1f64).tanh();
        let c1 = i_gate * cand; // forget * c0 drops out with c0 = 0
        let o_gate = sig(0.4 * x0 - 0.2);
        let want = o_gate * c1.tanh();
        assert!((hs.0[0][0] - want).abs() < 1e-12, "{} vs {want}", hs.0[0][0]);
    }

    #[test]
    fn truncation_preserves_earlier_states() {
        let spec = LstmSpec {
            input_dim: 2,
            hidden: 3,
        };
        let mut p = ParamStore::new(9);
        register_lstm(&mut p, "lstm", &spec).unwrap();
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|t| vec![(t as f64 * 0.3).sin(), (t as f64 * 0.7).cos()])
            .collect();
        let full = Tensor::from_rows(&rows).unwrap();
        let truncated = Tensor::from_rows(&rows[..4]).unwrap();
        let full_hs = lstm_scan(&p, "lstm", &spec, &full).unwrap();
        let trunc_hs = lstm_scan(&p, "lstm", &spec, &truncated).unwrap();
        for t in 0..4 {
            assert_eq!(full_hs.0[t], trunc_hs.0[t], "timestep {t}");
        }
    }

    #[test]
    fn non_finite_input_reports_timestep() {
        let spec = LstmSpec {
            input_dim: 1,
            hidden: 1,
        };
        let p = zero_store(&spec);
        let mut x = Tensor::zeros(vec![3, 1]);
        // Tensor::new would reject NaN; build via the unchecked zeros path.
        x.values_mut()[2] = f64::NAN;
        match lstm_scan(&p, "lstm", &spec, &x) {
            Err(RecurrentError::NonFiniteInput { timestep }) => assert_eq!(timestep, 2),
            other => panic!("expected NonFiniteInput, got {other:?}"),
        }
    }
}
