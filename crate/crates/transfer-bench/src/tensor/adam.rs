//! Bias-corrected Adam.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults follow the training setup used
/// throughout the crate: Adam with learning rate 1e-4 and momentum 0.99.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-4, beta1: 0.99, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad Adam hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element = f32> {
    pub step_count: u64,
    pub m: Vec<E>,
    pub v: Vec<E>,
    pub params: AdamParams,
}

impl<E: Element> AdamState<E> {
    pub fn new(numel: usize, params: AdamParams) -> Self {
        AdamState { step_count: 0, m: vec![E::ZERO; numel], v: vec![E::ZERO; numel], params }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<E: Element>(
    name: &str,
    param: &mut Tensor<E>,
    grad: &[E],
    state: &mut AdamState<E>,
) -> Result<()> {
    if grad.len() != param.numel() || state.m.len() != param.numel() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "param `{name}`: {} values, grad {}, state {}",
                param.numel(),
                grad.len(),
                state.m.len()
            ),
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { param: name.to_string(), step: state.step_count + 1 });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let p = state.params;
    let b1 = E::from_f64(p.beta1);
    let b2 = E::from_f64(p.beta2);
    let one_minus_b1 = E::from_f64(1.0 - p.beta1);
    let one_minus_b2 = E::from_f64(1.0 - p.beta2);
    let corr1 = E::from_f64(1.0 / (1.0 - p.beta1.powi(t)));
    let corr2 = E::from_f64(1.0 / (1.0 - p.beta2.powi(t)));
    let lr = E::from_f64(p.learning_rate);
    let eps = E::from_f64(p.epsilon);

    let data = param.data_mut();
    for i in 0..data.len() {
        let g = grad[i];
        state.m[i] = b1.mul(state.m[i]).add(one_minus_b1.mul(g));
        state.v[i] = b2.mul(state.v[i]).add(one_minus_b2.mul(g.mul(g)));
        let m_hat = state.m[i].mul(corr1);
        let v_hat = state.v[i].mul(corr2);
        data[i] = data[i].sub(lr.mul(m_hat).div(v_hat.sqrt().add(eps)));
    }
    Ok(())
}
