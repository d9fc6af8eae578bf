//! Iterative fast gradient sign method: repeated epsilon-sized steps along
//! the sign of the input gradient of the true-label loss, clipped to [0,1].

use std::time::Instant;

use super::{clip01, finish, loss_and_input_grad, predict_one, AttackConfig, AttackResult};
use crate::error::Result;
use crate::model::Classifier;
use crate::tensor::Tensor32;

pub fn ifgsm(
    model: &dyn Classifier,
    x: &Tensor32,
    true_label: u8,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let (_, original_label) = predict_one(model, x)?;
    let eps = cfg.epsilon as f32;
    let mut adv = x.clone();
    for _ in 0..cfg.steps {
        let (_, grad) = loss_and_input_grad(model, &adv, true_label, "ifgsm")?;
        for (a, &g) in adv.data_mut().iter_mut().zip(&grad) {
            *a = clip01(*a + eps * super::sign(g));
        }
    }
    finish(model, x, adv, original_label, cfg.steps, started, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::testutil::scalar_classifier;
    use crate::tensor::Tensor;

    #[test]
    fn single_step_on_logistic_surrogate_moves_by_epsilon() {
        // classifier score increases in x; true label 0, so the loss grows
        // with x and the sign step goes up: 0.5 -> 0.6
        let model = scalar_classifier(4.0, 0.5);
        let x = Tensor::new([1], vec![0.5]).unwrap();
        let cfg = AttackConfig::ifgsm(0.1, 1);
        let r = ifgsm(&model, &x, 0, &cfg).unwrap();
        assert!((r.adversarial.data()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn linf_bound_steps_times_epsilon() {
        let model = scalar_classifier(4.0, 0.2);
        let x = Tensor::new([1], vec![0.4]).unwrap();
        let cfg = AttackConfig::ifgsm(0.05, 4);
        let r = ifgsm(&model, &x, 0, &cfg).unwrap();
        assert!(r.linf <= 4.0 * 0.05 + 1e-6);
        assert!(r.adversarial.data()[0] >= 0.0 && r.adversarial.data()[0] <= 1.0);
    }

    #[test]
    fn one_step_is_fgsm_and_flips_an_easy_case() {
        let model = scalar_classifier(50.0, 0.52);
        let x = Tensor::new([1], vec![0.5]).unwrap();
        // label 0 correct at x (score negative); one strong step flips it
        let cfg = AttackConfig::ifgsm(0.1, 1);
        let r = ifgsm(&model, &x, 0, &cfg).unwrap();
        assert_eq!(r.original_label, 0);
        assert_eq!(r.adversarial_label, 1);
        assert!(r.success);
    }

    #[test]
    fn distortions_recompute_to_stored_values() {
        let model = scalar_classifier(3.0, 0.3);
        let x = Tensor::new([1], vec![0.45]).unwrap();
        let r = ifgsm(&model, &x, 0, &AttackConfig::ifgsm(0.07, 3)).unwrap();
        let l1 = crate::metrics::l1_distortion(&x, &r.adversarial).unwrap();
        let linf = crate::metrics::max_abs_distortion(&x, &r.adversarial).unwrap();
        assert!((l1 - r.l1).abs() < 1e-6);
        assert!((linf - r.linf).abs() < 1e-6);
    }
}
