//! Property tests over the attack invariants, using small closed-form
//! classifiers so each case stays fast.

use proptest::prelude::*;

use transfer_bench::attack::{deepfool, ifgsm, pgd, run_attack, AttackConfig, AttackKind};
use transfer_bench::error::Result;
use transfer_bench::model::Classifier;
use transfer_bench::tensor::{Graph, Tensor, Tensor32, VarId};

/// logits = [0, w.x + b]
struct Affine {
    w: Vec<f32>,
    b: f32,
}

impl Classifier for Affine {
    fn sample_shape(&self) -> Vec<usize> {
        vec![self.w.len()]
    }
    fn logits(&self, g: &mut Graph<f32>, input: VarId) -> Result<VarId> {
        let d = self.w.len();
        let mut wdata = vec![0.0f32; d * 2];
        for (i, &wi) in self.w.iter().enumerate() {
            wdata[i * 2 + 1] = wi;
        }
        let w = g.leaf(Tensor::new([d, 2], wdata)?);
        let b = g.leaf(Tensor::new([2], vec![0.0, self.b])?);
        g.dense(input, w, b)
    }
}

fn arb_model_and_input() -> impl Strategy<Value = (Vec<f32>, f32, Vec<f32>)> {
    (2usize..10).prop_flat_map(|d| {
        (
            proptest::collection::vec(-1.0f32..1.0, d),
            -0.8f32..0.8,
            proptest::collection::vec(0.05f32..0.95, d),
        )
    })
}

fn max_abs_delta(a: &Tensor32, b: &[f32]) -> f32 {
    a.data().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Every attack output lies in [0,1]; the success flag always equals an
    // independent label-flip recheck.
    #[test]
    fn outputs_clipped_and_success_flag_consistent(
        (w, b, x) in arb_model_and_input(),
        kind in prop_oneof![
            Just(AttackKind::Ifgsm),
            Just(AttackKind::Pgd),
            Just(AttackKind::Deepfool),
            Just(AttackKind::Jsma),
        ],
        label in 0u8..2,
    ) {
        let model = Affine { w, b };
        let cfg = match kind {
            AttackKind::Ifgsm => AttackConfig::ifgsm(0.05, 4),
            AttackKind::Pgd => AttackConfig::pgd(),
            AttackKind::Deepfool => AttackConfig::deepfool(),
            AttackKind::Jsma => AttackConfig::jsma(0.2),
            AttackKind::Lbfgs => unreachable!(),
        };
        let xt = Tensor::new([x.len()], x.clone()).unwrap();
        // JSMA rejects targets equal to the current prediction; skip those
        let r = match run_attack(&model, &xt, label, &cfg) {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        prop_assert!(r.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // independent recheck of the flip
        let mut g = Graph::<f32>::new();
        let input = g.leaf(r.adversarial.clone().reshaped([1, x.len()]).unwrap());
        let logits = model.logits(&mut g, input).unwrap();
        let v = g.value(logits);
        let label_now = u8::from(v.data()[1] > v.data()[0]);
        prop_assert_eq!(label_now != r.original_label, r.success);
    }

    // I-FGSM: per-coordinate movement never exceeds steps * epsilon.
    #[test]
    fn ifgsm_linf_bound((w, b, x) in arb_model_and_input(), eps in 0.01f64..0.2, steps in 1usize..8) {
        let model = Affine { w, b };
        let xt = Tensor::new([x.len()], x.clone()).unwrap();
        let r = ifgsm(&model, &xt, 0, &AttackConfig::ifgsm(eps, steps)).unwrap();
        prop_assert!(max_abs_delta(&r.adversarial, &x) <= (eps * steps as f64) as f32 + 1e-6);
    }

    // PGD: the projection radius binds no matter how many steps run.
    #[test]
    fn pgd_radius_bound((w, b, x) in arb_model_and_input(), radius in 0.0f64..0.3) {
        let model = Affine { w, b };
        let mut cfg = AttackConfig::pgd();
        cfg.pgd_radius = radius;
        cfg.steps = 12;
        let xt = Tensor::new([x.len()], x.clone()).unwrap();
        let r = pgd(&model, &xt, 0, &cfg).unwrap();
        prop_assert!(max_abs_delta(&r.adversarial, &x) <= radius as f32 + 1e-6);
    }

    // DeepFool on an affine model reproduces the closed-form minimal-L2
    // perturbation up to the overshoot factor.
    #[test]
    fn deepfool_matches_affine_closed_form((w, b, x) in arb_model_and_input()) {
        let model = Affine { w: w.clone(), b };
        let s: f32 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f32>() + b;
        let n2: f64 = w.iter().map(|&v| (v as f64) * (v as f64)).sum();
        prop_assume!(n2 > 1e-4);
        prop_assume!(s.abs() > 1e-3); // clear of the boundary
        let xt = Tensor::new([x.len()], x.clone()).unwrap();
        let cfg = AttackConfig::deepfool();
        let r = deepfool(&model, &xt, &cfg).unwrap();
        for i in 0..x.len() {
            let raw = x[i] as f64 + (1.0 + cfg.deepfool_overshoot) * (-(s as f64)) * w[i] as f64 / n2;
            let expect = raw.clamp(0.0, 1.0);
            prop_assert!((r.adversarial.data()[i] as f64 - expect).abs() < 1e-6);
        }
    }

    // JSMA: modified cells stay within the distinct-cell budget and every
    // increment is exactly theta before clipping.
    #[test]
    fn jsma_budget_and_step_size((w, b, x) in arb_model_and_input(), theta in 0.05f64..0.5) {
        let model = Affine { w, b };
        let budget = 0.5f64;
        let cfg = AttackConfig {
            jsma_budget: budget,
            jsma_patience: 0,
            jsma_max_iters: Some(16),
            ..AttackConfig::jsma(theta)
        };
        let xt = Tensor::new([x.len()], x.clone()).unwrap();
        let r = match run_attack(&model, &xt, 0, &cfg) {
            Ok(r) => r,
            Err(_) => return Ok(()), // input already classified as target
        };
        let max_cells = (budget * x.len() as f64).ceil() as usize;
        let mut touched = 0;
        for (&a, &o) in r.adversarial.data().iter().zip(&x) {
            let delta = (a - o) as f64;
            if delta != 0.0 {
                touched += 1;
                prop_assert!(delta > 0.0, "increments are positive");
                if a < 1.0 {
                    // unclipped: total movement is a multiple of theta
                    let steps = (delta / theta).round();
                    prop_assert!((delta - steps * theta).abs() < 1e-5, "delta {delta}");
                }
            }
        }
        prop_assert!(touched <= max_cells);
    }
}
