//! Jacobian-based saliency map attack, single-cell positive-increment
//! variant: each iteration scores every input cell from the Jacobian of the
//! class probabilities, then bumps the most salient non-saturated cell by
//! theta (clipped to 1).
//!
//! The classifier output F is the softmax probability vector, so for the
//! binary task the Jacobian row of the non-target class is exactly the
//! negated target row; one backward pass per iteration yields both.

use std::collections::HashSet;
use std::time::Instant;

use super::{batched, finish, predict_probs, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::tensor::{Graph, Tensor32};

/// Saliency of every cell toward the target class: zero where the target
/// derivative is negative or the summed other-class derivatives are
/// positive, otherwise the product of the two magnitudes.
pub fn jsma_saliency(grad_target: &[f32], grad_others_sum: &[f32]) -> Vec<f32> {
    grad_target
        .iter()
        .zip(grad_others_sum)
        .map(|(&dt, &dos)| if dt < 0.0 || dos > 0.0 { 0.0 } else { dt * dos.abs() })
        .collect()
}

/// Gradient of the target-class softmax probability w.r.t. the input.
fn target_prob_grad(model: &dyn Classifier, x: &Tensor32, target: u8) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let mut t = batched(model, x)?;
    t.set_requires_grad(true);
    let input = g.leaf(t);
    let logits = model.logits(&mut g, input)?;
    let probs = g.softmax(logits)?;
    let pt = g.slice_cols(probs, target as usize, 1)?;
    let scalar = g.sum(pt);
    g.backward(scalar)?;
    let grad = g.grad(input).expect("input gradient").to_vec();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Attack { attack: "jsma", reason: "non-finite Jacobian".into() });
    }
    Ok(grad)
}

pub fn jsma(
    model: &dyn Classifier,
    x: &Tensor32,
    target_class: u8,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let (_, original_label) = predict_probs(model, x)?;
    if target_class == original_label {
        return Err(Error::InvalidArgument(format!(
            "jsma target {target_class} equals the model's label on this input"
        )));
    }
    let budget_cells = ((cfg.jsma_budget * x.numel() as f64).ceil() as usize).max(1);
    let max_iters = cfg.jsma_max_iters.unwrap_or(budget_cells);
    let theta = cfg.theta as f32;

    let mut adv = x.clone();
    let mut modified: HashSet<usize> = HashSet::new();
    let mut progress: Vec<f32> = Vec::new();
    let mut iterations = 0;
    let mut detail = None;

    for it in 0..max_iters {
        let (probs, label) = predict_probs(model, &adv)?;
        if label == target_class {
            break;
        }
        // stall detection: abort once even a linear extrapolation of the
        // recent target-probability trend cannot reach 0.5 in the budget
        let p_t = probs[target_class as usize];
        progress.push(p_t);
        if cfg.jsma_patience > 0 && progress.len() > cfg.jsma_patience {
            let gained = (p_t - progress[progress.len() - 1 - cfg.jsma_patience]) as f64;
            // gains below the noise floor count as no movement at all
            let rate =
                if gained < cfg.jsma_min_progress { 0.0 } else { gained / cfg.jsma_patience as f64 };
            let needed = 0.5 - p_t as f64;
            let remaining = (max_iters - it) as f64;
            if needed > 0.0 && rate * remaining < needed {
                detail = Some(format!(
                    "stalled at p_target = {p_t:.3e} (gained {gained:.2e} over {} iterations)",
                    cfg.jsma_patience
                ));
                break;
            }
        }

        let grad_t = target_prob_grad(model, &adv, target_class)?;
        // binary softmax: the other row is the negated target row
        let grad_others: Vec<f32> = grad_t.iter().map(|&v| -v).collect();
        let saliency = jsma_saliency(&grad_t, &grad_others);

        let under_budget = modified.len() < budget_cells;
        let mut best: Option<(usize, f32)> = None;
        for (i, (&s, &v)) in saliency.iter().zip(adv.data()).enumerate() {
            if s <= 0.0 || v >= 1.0 {
                continue; // saturated cells are exhausted
            }
            if !under_budget && !modified.contains(&i) {
                continue;
            }
            if best.map_or(true, |(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        let Some((cell, _)) = best else {
            detail = Some(if under_budget {
                "zero saliency everywhere".into()
            } else {
                format!("cell budget of {budget_cells} exhausted")
            });
            break;
        };
        let v = &mut adv.data_mut()[cell];
        *v = (*v + theta).min(1.0);
        modified.insert(cell);
        iterations = it + 1;
    }
    if iterations == max_iters && detail.is_none() {
        detail = Some(format!("iteration cap {max_iters} reached"));
    }
    finish(model, x, adv, original_label, iterations, started, detail)
}
