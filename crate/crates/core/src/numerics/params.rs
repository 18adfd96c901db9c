//! Named parameter storage with parallel gradient buffers.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    value: Tensor,
    grad: Tensor,
}

/// Flat registry of named learnable tensors, each paired with a gradient
/// buffer of identical shape. Iteration order is the name order (BTreeMap),
/// which keeps the optimizer and finite differences deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        if self.entries.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries
            .insert(name.to_string(), ParamEntry { value, grad });
        Ok(())
    }

    /// Glorot-uniform matrix: limit sqrt(6 / (fan_in + fan_out)) with
    /// fan_in = rows, fan_out = cols under the row-vector convention.
    pub fn insert_glorot(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<(), NumericsError> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let values: Vec<f64> = (0..rows * cols)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], values)?)
    }

    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        lo: f64,
        hi: f64,
    ) -> Result<(), NumericsError> {
        let numel: usize = shape.iter().product();
        let values: Vec<f64> = (0..numel).map(|_| self.rng.gen_range(lo..hi)).collect();
        self.insert(name, Tensor::new(shape, values)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<(), NumericsError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(NumericsError::ParamShape {
                name: name.to_string(),
                expected: entry.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn add_to_grad(&mut self, name: &str, delta: &[f64]) -> Result<(), NumericsError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        debug_assert_eq!(entry.grad.numel(), delta.len());
        for (g, &d) in entry.grad.values_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Sets every gradient entry to exactly 0.0.
    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.values_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.entries
            .iter()
            .map(|(name, e)| (name.as_str(), &e.value, &e.grad))
    }

    /// In-place update of one parameter's scalars given its gradient.
    /// Used by the optimizer; validates finiteness afterwards.
    pub(crate) fn update_values<F>(&mut self, name: &str, mut f: F) -> Result<(), NumericsError>
    where
        F: FnMut(usize, f64, f64) -> f64,
    {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        let grads: Vec<f64> = entry.grad.values().to_vec();
        for (i, v) in entry.value.values_mut().iter_mut().enumerate() {
            *v = f(i, *v, grads[i]);
        }
        if !entry.value.is_finite() {
            return Err(NumericsError::NonFiniteTensor);
        }
        Ok(())
    }

    /// Raw mutable access to one parameter's scalars for finite-difference
    /// perturbation; the closure must restore finiteness before returning.
    pub(crate) fn perturb(&mut self, name: &str, index: usize, delta: f64) {
        let entry = self.entries.get_mut(name).expect("known parameter");
        entry.value.values_mut()[index] += delta;
    }

    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &BTreeMap<String, Tensor>) -> Result<(), NumericsError> {
        for (name, value) in snapshot {
            self.set_value(name, value.clone())?;
        }
        Ok(())
    }
}

/// Connects a [`ParamStore`] to a [`Tape`]: parameters become input nodes
/// on first use and their tape gradients flow back into the store.
pub struct Binding<'a> {
    tape: &'a Tape,
    params: &'a ParamStore,
    bound: RefCell<Vec<(String, Var)>>,
}

impl<'a> Binding<'a> {
    pub fn new(tape: &'a Tape, params: &'a ParamStore) -> Self {
        Self {
            tape,
            params,
            bound: RefCell::new(Vec::new()),
        }
    }

    /// Tape node holding the named parameter's current value. Each name is
    /// bound at most once per tape so gradient accumulation stays correct.
    pub fn param(&self, name: &str) -> Result<Var, NumericsError> {
        if let Some((_, var)) = self.bound.borrow().iter().find(|(n, _)| n == name) {
            return Ok(*var);
        }
        let value = self.params.value(name)?.clone();
        let var = self.tape.input(value);
        self.bound.borrow_mut().push((name.to_string(), var));
        Ok(var)
    }

    fn into_bound(self) -> Vec<(String, Var)> {
        self.bound.into_inner()
    }
}

/// Runs `build` to produce a scalar loss node, backpropagates, and
/// accumulates d(loss)/d(param) into the store's gradient buffers.
/// Returns the loss value.
pub fn forward_backward<F>(params: &mut ParamStore, build: F) -> Result<f64, NumericsError>
where
    F: FnOnce(&Tape, &Binding) -> Result<Var, NumericsError>,
{
    let tape = Tape::new();
    let (loss, bound) = {
        let binding = Binding::new(&tape, params);
        let loss = build(&tape, &binding)?;
        (loss, binding.into_bound())
    };
    tape.backward(loss)?;
    for (name, var) in bound {
        if let Some(grad) = tape.grad(var) {
            params.add_to_grad(&name, grad.values())?;
        }
    }
    Ok(tape.value_scalar(loss))
}

/// Forward-only evaluation of a scalar graph; no gradients are produced.
pub fn forward_value<F>(params: &ParamStore, build: F) -> Result<f64, NumericsError>
where
    F: FnOnce(&Tape, &Binding) -> Result<Var, NumericsError>,
{
    let tape = Tape::new();
    let binding = Binding::new(&tape, params);
    let loss = build(&tape, &binding)?;
    Ok(tape.value_scalar(loss))
}
