//! Projected gradient descent: epsilon-sized sign steps projected back onto
//! the L-inf ball of radius `pgd_radius` around the input, intersected with
//! [0,1]. Starts from the input itself unless the random-start flag is set.

use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{finish, loss_and_input_grad, predict_one, sign, AttackConfig, AttackResult};
use crate::error::Result;
use crate::model::Classifier;
use crate::rng::stream_rng;
use crate::tensor::Tensor32;

pub fn pgd(
    model: &dyn Classifier,
    x: &Tensor32,
    true_label: u8,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let (_, original_label) = predict_one(model, x)?;
    let eps = cfg.epsilon as f32;
    let radius = cfg.pgd_radius as f32;
    let project = |v: f32, center: f32| v.clamp((center - radius).max(0.0), (center + radius).min(1.0));

    let mut adv = x.clone();
    if cfg.pgd_random_start && radius > 0.0 {
        // seeded by the sample content so the run stays reproducible
        let mut h = Sha256::new();
        for v in x.data() {
            h.update(v.to_le_bytes());
        }
        let seed = u64::from_le_bytes(h.finalize()[..8].try_into().unwrap());
        let mut rng = stream_rng(seed, "pgd-start");
        for (a, &c) in adv.data_mut().iter_mut().zip(x.data()) {
            *a = project(c + rng.gen_range(-radius..=radius), c);
        }
    }
    for _ in 0..cfg.steps {
        let (_, grad) = loss_and_input_grad(model, &adv, true_label, "pgd")?;
        for ((a, &g), &c) in adv.data_mut().iter_mut().zip(&grad).zip(x.data()) {
            *a = project(*a + eps * sign(g), c);
        }
    }
    finish(model, x, adv, original_label, cfg.steps, started, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::ifgsm;
    use crate::attack::testutil::scalar_classifier;
    use crate::tensor::Tensor;

    #[test]
    fn zero_radius_returns_the_input() {
        let model = scalar_classifier(5.0, 0.3);
        let x = Tensor::new([1], vec![0.4]).unwrap();
        let cfg = AttackConfig { pgd_radius: 0.0, ..AttackConfig::pgd() };
        let r = pgd(&model, &x, 0, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
        assert_eq!(r.linf, 0.0);
        assert_eq!(r.psnr_db, f64::INFINITY);
    }

    #[test]
    fn dominated_projection_matches_ifgsm_trajectory() {
        let model = scalar_classifier(4.0, 0.9);
        let x = Tensor::new([1], vec![0.35]).unwrap();
        let mut cfg = AttackConfig::pgd();
        cfg.epsilon = 0.02;
        cfg.steps = 5;
        cfg.pgd_radius = 1.0; // never binds
        let r_pgd = pgd(&model, &x, 0, &cfg).unwrap();
        let r_ifgsm = ifgsm(&model, &x, 0, &AttackConfig::ifgsm(0.02, 5)).unwrap();
        assert_eq!(r_pgd.adversarial.data()[0].to_bits(), r_ifgsm.adversarial.data()[0].to_bits());
    }

    #[test]
    fn radius_bound_holds_after_every_run() {
        let model = scalar_classifier(6.0, 0.1);
        for start in [0.0f32, 0.2, 0.77, 1.0] {
            let x = Tensor::new([1], vec![start]).unwrap();
            let cfg = AttackConfig::pgd();
            let r = pgd(&model, &x, 0, &cfg).unwrap();
            assert!(r.linf <= cfg.pgd_radius + 1e-6, "linf {} at start {start}", r.linf);
            let v = r.adversarial.data()[0];
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn random_start_is_reproducible_and_stays_in_the_ball() {
        let model = crate::attack::testutil::AffineClassifier { w: vec![2.0, -1.0], b: -0.4 };
        let x = Tensor::new([2], vec![0.5, 0.2]).unwrap();
        let cfg = AttackConfig { pgd_random_start: true, ..AttackConfig::pgd() };
        let a = pgd(&model, &x, 0, &cfg).unwrap();
        let b = pgd(&model, &x, 0, &cfg).unwrap();
        assert_eq!(a.adversarial.data(), b.adversarial.data());
        assert!(a.linf <= cfg.pgd_radius + 1e-6);
    }
}
