//! Adam with bias correction.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::NumericsError;

/// Per-parameter first/second moment estimates plus the shared step
/// counter and learning rate. Epsilon sits outside the square root, and
/// moments are lazily initialized to zero the first time a parameter is
/// seen.
#[derive(Debug, Clone)]
pub struct AdamState {
    learning_rate: f64,
    lr_floor: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(learning_rate: f64, lr_floor: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!(lr_floor > 0.0, "learning-rate floor must be positive");
        Self {
            learning_rate: learning_rate.max(lr_floor),
            lr_floor,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            epsilon: Self::DEFAULT_EPSILON,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Multiplies the learning rate by `factor`, never dropping below the
    /// configured floor. Returns the new rate.
    pub fn reduce_learning_rate(&mut self, factor: f64) -> f64 {
        self.learning_rate = (self.learning_rate * factor).max(self.lr_floor);
        self.learning_rate
    }

    /// One Adam update from the gradients currently held in `params`.
    pub fn apply(&mut self, params: &mut ParamStore) -> Result<(), NumericsError> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let numel = params.value(&name)?.numel();
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; numel]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; numel]);
            let (beta1, beta2) = (self.beta1, self.beta2);
            let (lr, eps) = (self.learning_rate, self.epsilon);
            params.update_values(&name, |i, w, g| {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w - lr * m_hat / (v_hat.sqrt() + eps)
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with(name: &str, values: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new(0);
        let n = values.len();
        p.insert(name, Tensor::new(vec![n], values).unwrap()).unwrap();
        p
    }

    fn set_grad(p: &mut ParamStore, name: &str, g: &[f64]) {
        p.zero_grads();
        p.add_to_grad(name, g).unwrap();
    }

    #[test]
    fn single_step_with_unit_gradient() {
        // Bias-corrected m_hat / sqrt(v_hat) is exactly 1 on the first
        // step, so the update is -lr / (1 + eps).
        let mut p = store_with("w", vec![0.0]);
        let mut adam = AdamState::new(0.001, 1e-9);
        set_grad(&mut p, "w", &[1.0]);
        adam.apply(&mut p).unwrap();
        let w = p.value("w").unwrap().values()[0];
        assert!((w - (-0.001)).abs() < 1e-9, "w = {}", w);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut p = store_with("w", vec![0.25, -1.5]);
        let mut adam = AdamState::new(0.001, 1e-9);
        for _ in 0..3 {
            set_grad(&mut p, "w", &[0.0, 0.0]);
            adam.apply(&mut p).unwrap();
        }
        assert_eq!(p.value("w").unwrap().values(), &[0.25, -1.5]);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn two_steps_decrease_monotonically() {
        let mut p = store_with("w", vec![0.0]);
        let mut adam = AdamState::new(0.001, 1e-9);
        set_grad(&mut p, "w", &[1.0]);
        adam.apply(&mut p).unwrap();
        let w1 = p.value("w").unwrap().values()[0];
        set_grad(&mut p, "w", &[1.0]);
        adam.apply(&mut p).unwrap();
        let w2 = p.value("w").unwrap().values()[0];
        assert!(w1 < 0.0);
        assert!(w2 < w1);
        // Hand-evaluated t=2: m=0.19/(1-0.81), v=0.001999/(1-0.998001)
        // give m_hat = v_hat = 1 again, so the second delta is ~ -lr too.
        assert!((w2 - 2.0 * w1).abs() < 1e-6);
    }

    #[test]
    fn learning_rate_floor_is_enforced() {
        let mut adam = AdamState::new(0.001, 0.000025);
        for _ in 0..10 {
            adam.reduce_learning_rate(0.25);
        }
        assert_eq!(adam.learning_rate(), 0.000025);
    }
}
