//! Central-difference gradient oracle.
//!
//! Deliberately independent of the tape: it only needs a scalar loss
//! function of a [`ParamStore`], which is what gradient-check tests use to
//! validate `forward_backward`.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;

/// Numeric gradient of `loss_fn` w.r.t. every scalar in `params` via
/// `(f(w + step) - f(w - step)) / (2 * step)`, one entry at a time.
/// Parameters are restored to their original values before returning.
pub fn finite_diff_grad<F>(
    params: &mut ParamStore,
    step: f64,
    mut loss_fn: F,
) -> Result<BTreeMap<String, Tensor>, NumericsError>
where
    F: FnMut(&mut ParamStore) -> Result<f64, NumericsError>,
{
    if !(step > 0.0) {
        return Err(NumericsError::BadStep(step));
    }
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut out = BTreeMap::new();
    for name in names {
        let shape = params.value(&name)?.shape().to_vec();
        let numel: usize = shape.iter().product();
        let mut grad = vec![0.0; numel];
        for (index, slot) in grad.iter_mut().enumerate() {
            params.perturb(&name, index, step);
            let plus = loss_fn(params)?;
            params.perturb(&name, index, -2.0 * step);
            let minus = loss_fn(params)?;
            params.perturb(&name, index, step);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFiniteLoss {
                    param: name.clone(),
                    index,
                });
            }
            *slot = (plus - minus) / (2.0 * step);
        }
        out.insert(name, Tensor::new(shape, grad)?);
    }
    Ok(out)
}
