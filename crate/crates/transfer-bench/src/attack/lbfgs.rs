//! Box-constrained L-BFGS attack.
//!
//! Inner problem: minimize `||x - adv||^2 + c * CE(F(adv), target)` over the
//! `[0,1]` box with projected descent along the L-BFGS two-loop direction
//! (memory 10). Outer search on the penalty weight: grow `c` by the growth
//! factor until the minimizer classifies as the target (more loss weight
//! makes the flip easier), then bisect geometrically down to the smallest
//! succeeding `c`, whose minimizer stays closest to the input.

use std::time::Instant;

use super::{finish, predict_one, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::model::{argmax2, Classifier};
use crate::tensor::{Graph, Tensor, Tensor32};

const MEMORY: usize = 10;
const C_MAX: f64 = 1e6;

/// Projected L-BFGS minimization over the `[0,1]` box.
///
/// `eval(z, need_grad)` returns the objective and, on demand, its gradient.
/// `accept(z, value)` is consulted after every accepted step; returning true
/// allows an early exit once further polish stops mattering.
pub(crate) fn minimize_box(
    mut eval: impl FnMut(&[f32], bool) -> Result<(f64, Option<Vec<f32>>)>,
    x0: &[f32],
    max_iters: usize,
    mut accept: impl FnMut(&[f32], f64) -> bool,
) -> Result<(Vec<f32>, f64, usize)> {
    let n = x0.len();
    let project = |v: f32| v.clamp(0.0, 1.0);
    let mut z: Vec<f32> = x0.iter().map(|&v| project(v)).collect();
    let (mut fz, g) = eval(&z, true)?;
    let mut grad = g.expect("gradient requested");
    let mut history: Vec<(Vec<f32>, Vec<f32>, f64)> = Vec::new();
    let mut iters = 0;

    for _ in 0..max_iters {
        // projected-gradient stationarity
        let pg = z
            .iter()
            .zip(&grad)
            .map(|(&zi, &gi)| (zi - project(zi - gi)).abs())
            .fold(0.0f32, f32::max);
        if pg < 1e-8 {
            break;
        }

        let mut dir = two_loop(&grad, &history);
        let descent: f64 =
            dir.iter().zip(&grad).map(|(&d, &g)| d as f64 * g as f64).sum();
        if descent >= 0.0 {
            history.clear();
            for (d, &g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
        }

        // backtracking on the projected step
        let mut alpha = 1.0f32;
        let mut accepted = None;
        for _ in 0..10 {
            let cand: Vec<f32> =
                z.iter().zip(&dir).map(|(&zi, &di)| project(zi + alpha * di)).collect();
            if cand == z {
                break;
            }
            let (fc, _) = eval(&cand, false)?;
            if fc < fz {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((znew, fnew)) = accepted else { break };
        iters += 1;

        let (_, gnew) = eval(&znew, true)?;
        let gnew = gnew.expect("gradient requested");
        let s: Vec<f32> = znew.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f32> = gnew.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(&a, &b)| a as f64 * b as f64).sum();
        if sy > 1e-10 {
            if history.len() == MEMORY {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        let improvement = (fz - fnew) / fz.abs().max(1e-12);
        z = znew;
        fz = fnew;
        grad = gnew;
        if accept(&z, fz) && improvement < 1e-3 {
            break;
        }
        let _ = n;
    }
    Ok((z, fz, iters))
}

fn two_loop(grad: &[f32], history: &[(Vec<f32>, Vec<f32>, f64)]) -> Vec<f32> {
    let mut q: Vec<f64> = grad.iter().map(|&g| g as f64).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.iter().zip(&q).map(|(&si, &qi)| si as f64 * qi).sum::<f64>();
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi as f64;
        }
        alphas.push(a);
    }
    let gamma = history.last().map_or(1.0, |(s, y, _)| {
        let sy: f64 = s.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum();
        let yy: f64 = y.iter().map(|&b| (b as f64) * (b as f64)).sum();
        if yy > 0.0 {
            sy / yy
        } else {
            1.0
        }
    });
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, rho), &a) in history.iter().zip(alphas.iter().rev()) {
        let beta = rho * y.iter().zip(&q).map(|(&yi, &qi)| yi as f64 * qi).sum::<f64>();
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - beta) * si as f64;
        }
    }
    q.iter().map(|&v| -v as f32).collect()
}

/// Objective and gradient of one inner problem at penalty weight `c`.
fn objective(
    model: &dyn Classifier,
    x: &Tensor32,
    target: u8,
    c: f64,
    z: &[f32],
    need_grad: bool,
) -> Result<(f64, Option<Vec<f32>>, u8)> {
    let mut g = Graph::<f32>::new();
    let mut t = Tensor::new(x.shape().to_vec(), z.to_vec())?;
    t.set_requires_grad(need_grad);
    let mut shape = vec![1usize];
    shape.extend_from_slice(x.shape());
    let t = t.reshaped(shape)?;
    let input = g.leaf(t);
    let logits = model.logits(&mut g, input)?;
    let lv = g.value(logits);
    let label = argmax2(&[lv.data()[0], lv.data()[1]]);

    let x_leaf = {
        let mut shape = vec![1usize];
        shape.extend_from_slice(x.shape());
        g.leaf(x.clone().reshaped(shape)?)
    };
    let diff = g.sub(input, x_leaf)?;
    let sq = g.mul(diff, diff)?;
    let dist = g.sum(sq);
    let ce = g.softmax_xent(logits, &[target as usize])?;
    let ce_w = g.scale(ce, c);
    let obj = g.add(dist, ce_w)?;
    let value = g.value(obj).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Attack { attack: "lbfgs", reason: format!("non-finite objective {value}") });
    }
    if !need_grad {
        return Ok((value, None, label));
    }
    g.backward(obj)?;
    let grad = g.grad(input).expect("input gradient").to_vec();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Attack { attack: "lbfgs", reason: "non-finite gradient".into() });
    }
    Ok((value, Some(grad), label))
}

struct InnerRun {
    adv: Vec<f32>,
    success: bool,
    iters: usize,
}

fn inner_run(
    model: &dyn Classifier,
    x: &Tensor32,
    target: u8,
    c: f64,
    start: &[f32],
    cfg: &AttackConfig,
) -> Result<InnerRun> {
    // every objective evaluation also classifies the iterate; once the
    // target label holds and the objective plateaus, the run can stop
    let last_label = std::cell::Cell::new(u8::MAX);
    let (adv, _, iters) = minimize_box(
        |z, need_grad| {
            let (v, g, label) = objective(model, x, target, c, z, need_grad)?;
            last_label.set(label);
            Ok((v, g))
        },
        start,
        cfg.lbfgs_inner_iters,
        |_, _| last_label.get() == target,
    )?;
    let t = Tensor::new(x.shape().to_vec(), adv.clone())?;
    let (_, label) = predict_one(model, &t)?;
    Ok(InnerRun { adv, success: label == target, iters })
}

pub fn lbfgs(
    model: &dyn Classifier,
    x: &Tensor32,
    _true_label: u8,
    target_class: u8,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let (_, original_label) = predict_one(model, x)?;
    if original_label == target_class {
        // zero perturbation already satisfies the target constraint
        return finish(model, x, x.clone(), original_label, 0, started, None);
    }

    let mut total_iters = 0;
    let mut c = cfg.lbfgs_c_init;
    let mut warm: Vec<f32> = x.data().to_vec();
    let mut first_success: Option<(f64, Vec<f32>)> = None;
    let mut last_fail = 0.0f64;
    while c <= C_MAX {
        let run = inner_run(model, x, target_class, c, &warm, cfg)?;
        total_iters += run.iters;
        warm.clone_from_slice(&run.adv);
        if run.success {
            first_success = Some((c, run.adv));
            break;
        }
        last_fail = c;
        c *= cfg.lbfgs_c_growth;
    }
    let Some((mut c_hi, mut best)) = first_success else {
        let t = Tensor::new(x.shape().to_vec(), warm)?;
        return finish(
            model,
            x,
            t,
            original_label,
            total_iters,
            started,
            Some(format!("no successful penalty weight up to c = {C_MAX:.0e}")),
        );
    };

    // smallest succeeding c: geometric bisection on (last_fail, c_hi],
    // stopping early once the bracket is tight
    let mut c_lo = if last_fail > 0.0 { last_fail } else { c_hi / cfg.lbfgs_c_growth };
    for _ in 0..cfg.lbfgs_bisection_steps {
        if c_hi / c_lo < 2.0 {
            break;
        }
        let mid = (c_lo * c_hi).sqrt();
        let run = inner_run(model, x, target_class, mid, &best, cfg)?;
        total_iters += run.iters;
        if run.success {
            c_hi = mid;
            best = run.adv;
        } else {
            c_lo = mid;
        }
    }
    let adv = Tensor::new(x.shape().to_vec(), best)?;
    finish(
        model,
        x,
        adv,
        original_label,
        total_iters,
        started,
        Some(format!("c = {c_hi:.3e}")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::testutil::AffineClassifier;

    #[test]
    fn quadratic_reaches_the_analytic_minimum() {
        // f(u,v) = (u - 0.3)^2 + 2 (v - 0.7)^2, minimum inside the box
        let eval = |z: &[f32], need_grad: bool| {
            let (u, v) = (z[0] as f64, z[1] as f64);
            let f = (u - 0.3).powi(2) + 2.0 * (v - 0.7).powi(2);
            let g = need_grad
                .then(|| vec![(2.0 * (u - 0.3)) as f32, (4.0 * (v - 0.7)) as f32]);
            Ok((f, g))
        };
        let (z, f, iters) = minimize_box(eval, &[0.9, 0.1], 50, |_, _| false).unwrap();
        assert!(iters <= 50);
        assert!((z[0] - 0.3).abs() < 1e-5, "u = {}", z[0]);
        assert!((z[1] - 0.7).abs() < 1e-5, "v = {}", z[1]);
        assert!(f < 1e-9);
    }

    #[test]
    fn constrained_quadratic_sticks_to_the_box_face() {
        // unconstrained minimum at u = -0.5 lies outside; box clamps to 0
        let eval = |z: &[f32], need_grad: bool| {
            let u = z[0] as f64;
            let f = (u + 0.5).powi(2);
            Ok((f, need_grad.then(|| vec![(2.0 * (u + 0.5)) as f32])))
        };
        let (z, _, _) = minimize_box(eval, &[0.8], 50, |_, _| false).unwrap();
        assert!(z[0].abs() < 1e-6, "u = {}", z[0]);
    }

    #[test]
    fn already_target_classified_input_returns_zero_perturbation() {
        let model = AffineClassifier { w: vec![1.0, 1.0], b: 0.5 }; // classifies 1
        let x = crate::tensor::Tensor::new([2], vec![0.4, 0.4]).unwrap();
        let r = lbfgs(&model, &x, 0, 1, &AttackConfig::lbfgs()).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
        assert_eq!(r.iterations_used, 0);
        assert!(!r.success, "no label flip happened");
    }

    #[test]
    fn flips_an_affine_classifier_with_small_distortion() {
        let model = AffineClassifier { w: vec![1.5, -0.8, 0.4], b: -0.9 };
        let x = crate::tensor::Tensor::new([3], vec![0.3, 0.4, 0.2]).unwrap();
        let r = lbfgs(&model, &x, 0, 1, &AttackConfig::lbfgs()).unwrap();
        assert_eq!(r.original_label, 0);
        assert!(r.success, "detail: {:?}", r.detail);
        assert!(r.linf < 0.9);
        assert!(r.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
