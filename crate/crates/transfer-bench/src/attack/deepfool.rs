//! DeepFool for the binary case: iterative linearization of the logit margin
//! pushes the input across the decision boundary along the shortest L2 path,
//! then the accumulated perturbation is scaled by (1 + overshoot).
//!
//! Degenerate inputs: when the margin is exactly zero at the start the step
//! is zero, the iteration stalls, and the attack reports failure (the argmax
//! tie already resolves to class 0). A vanishing margin gradient raises a
//! singularity error naming the step.

use std::time::Instant;

use super::{batched, clip01, finish, predict_one, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::tensor::{Graph, Tensor32};

/// Signed margin (logit of `keep` minus the other logit) and its input
/// gradient; positive while still classified as `keep`.
fn margin_and_grad(model: &dyn Classifier, x: &Tensor32, keep: u8) -> Result<(f32, Vec<f32>)> {
    let mut g = Graph::<f32>::new();
    let mut t = batched(model, x)?;
    t.set_requires_grad(true);
    let input = g.leaf(t);
    let logits = model.logits(&mut g, input)?;
    let (keep_col, other_col) = if keep == 0 { (0, 1) } else { (1, 0) };
    let lk = g.slice_cols(logits, keep_col, 1)?;
    let lo = g.slice_cols(logits, other_col, 1)?;
    let diff = g.sub(lk, lo)?;
    let f = g.sum(diff);
    g.backward(f)?;
    let grad = g.grad(input).expect("input gradient").to_vec();
    Ok((g.value(f).data()[0], grad))
}

pub fn deepfool(model: &dyn Classifier, x: &Tensor32, cfg: &AttackConfig) -> Result<AttackResult> {
    let started = Instant::now();
    let (_, original_label) = predict_one(model, x)?;
    let overshoot = 1.0 + cfg.deepfool_overshoot as f32;
    let deliverable = |total_r: &[f32]| {
        let mut adv = x.clone();
        for (a, &r) in adv.data_mut().iter_mut().zip(total_r) {
            *a = clip01(*a + overshoot * r);
        }
        adv
    };

    let mut z = x.clone();
    let mut total_r = vec![0.0f32; x.numel()];
    let mut iterations = 0;
    for step in 0..cfg.deepfool_max_iter {
        // the flip test runs on what the attack would actually deliver: the
        // overshot, clipped perturbation (the raw iterate sits exactly on
        // the linearized boundary and would oscillate in float noise)
        let (_, label) = predict_one(model, &deliverable(&total_r))?;
        if label != original_label {
            break;
        }
        let (f, grad) = margin_and_grad(model, &z, original_label)?;
        let norm2: f64 = grad.iter().map(|&g| (g as f64) * (g as f64)).sum();
        if norm2.sqrt() < 1e-12 {
            return Err(Error::Singularity { step, norm: norm2.sqrt() });
        }
        let scale = -(f as f64) / norm2;
        let mut moved = false;
        for ((zi, ri), &gi) in z.data_mut().iter_mut().zip(total_r.iter_mut()).zip(&grad) {
            let r = (scale * gi as f64) as f32;
            *zi += r;
            *ri += r;
            moved |= r != 0.0;
        }
        iterations = step + 1;
        if !moved {
            break; // exactly on the boundary: f == 0 produces a zero step
        }
    }
    finish(model, x, deliverable(&total_r), original_label, iterations, started, None)
}
