//! The five evasion attacks. Each maps (classifier, sample, config) to an
//! adversarial example in `[0,1]`, perturbing test-time inputs only; model
//! parameters are never touched.

mod archive;
mod deepfool;
mod ifgsm;
mod jsma;
mod lbfgs;
mod pgd;

pub use archive::{AdversarialArchive, ArchiveEntry};
pub use deepfool::deepfool;
pub use ifgsm::ifgsm;
pub use jsma::{jsma, jsma_saliency};
pub use lbfgs::lbfgs;
pub use pgd::pgd;

use std::time::Instant;

use rayon::prelude::*;

use crate::data::PatchSample;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{argmax2, Classifier};
use crate::tensor::{Graph, Tensor, Tensor32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Ifgsm,
    Jsma,
    Lbfgs,
    Pgd,
    Deepfool,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Jsma => "jsma",
            AttackKind::Lbfgs => "lbfgs",
            AttackKind::Pgd => "pgd",
            AttackKind::Deepfool => "deepfool",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ifgsm" | "i-fgsm" => Ok(AttackKind::Ifgsm),
            "jsma" => Ok(AttackKind::Jsma),
            "lbfgs" | "l-bfgs" => Ok(AttackKind::Lbfgs),
            "pgd" => Ok(AttackKind::Pgd),
            "deepfool" => Ok(AttackKind::Deepfool),
            other => Err(Error::InvalidArgument(format!("unknown attack `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attack kind plus every tunable the five attacks use. Constructors pin the
/// defaults; fields irrelevant to a kind are ignored by it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Per-step strength for I-FGSM and PGD.
    pub epsilon: f64,
    /// Iteration count for I-FGSM (10) and PGD (40).
    pub steps: usize,
    /// JSMA per-cell increment.
    pub theta: f64,
    /// Max fraction of cells JSMA may modify.
    pub jsma_budget: f64,
    /// Hard cap on JSMA iterations; defaults to the distinct-cell budget.
    pub jsma_max_iters: Option<usize>,
    /// Abort JSMA when the target probability gained less than
    /// `jsma_min_progress` over this many iterations (0 disables).
    pub jsma_patience: usize,
    pub jsma_min_progress: f64,
    /// Radius of the PGD projection set S (L-inf ball around the input).
    pub pgd_radius: f64,
    pub pgd_random_start: bool,
    /// L-BFGS penalty-weight search: initial c, growth factor, bisection
    /// step budget, inner iteration cap.
    pub lbfgs_c_init: f64,
    pub lbfgs_c_growth: f64,
    pub lbfgs_bisection_steps: usize,
    pub lbfgs_inner_iters: usize,
    pub deepfool_max_iter: usize,
    pub deepfool_overshoot: f64,
}

pub const DEFAULT_PGD_EPSILON: f64 = 0.01;

impl AttackConfig {
    fn base(kind: AttackKind) -> Self {
        AttackConfig {
            kind,
            epsilon: 0.1,
            steps: 10,
            theta: 0.1,
            jsma_budget: 0.1,
            jsma_max_iters: None,
            jsma_patience: 24,
            jsma_min_progress: 5e-3,
            pgd_radius: 10.0 * DEFAULT_PGD_EPSILON,
            pgd_random_start: false,
            lbfgs_c_init: 1e-2,
            lbfgs_c_growth: 10.0,
            lbfgs_bisection_steps: 10,
            lbfgs_inner_iters: 15,
            deepfool_max_iter: 50,
            deepfool_overshoot: 0.02,
        }
    }

    pub fn ifgsm(epsilon: f64, steps: usize) -> Self {
        AttackConfig { epsilon, steps, ..Self::base(AttackKind::Ifgsm) }
    }

    pub fn jsma(theta: f64) -> Self {
        AttackConfig { theta, ..Self::base(AttackKind::Jsma) }
    }

    pub fn lbfgs() -> Self {
        Self::base(AttackKind::Lbfgs)
    }

    pub fn pgd() -> Self {
        AttackConfig { epsilon: DEFAULT_PGD_EPSILON, steps: 40, ..Self::base(AttackKind::Pgd) }
    }

    pub fn deepfool() -> Self {
        Self::base(AttackKind::Deepfool)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.kind {
            AttackKind::Ifgsm | AttackKind::Pgd => {
                if self.epsilon <= 0.0 {
                    return bad(format!("{}: epsilon must be > 0", self.kind));
                }
                if self.steps == 0 {
                    return bad(format!("{}: steps must be >= 1", self.kind));
                }
                if self.kind == AttackKind::Pgd && self.pgd_radius < 0.0 {
                    return bad("pgd: radius must be >= 0".into());
                }
            }
            AttackKind::Jsma => {
                if !(self.theta > 0.0 && self.theta <= 1.0) {
                    return bad("jsma: theta must be in (0,1]".into());
                }
                if !(self.jsma_budget > 0.0 && self.jsma_budget <= 1.0) {
                    return bad("jsma: budget must be in (0,1]".into());
                }
            }
            AttackKind::Lbfgs => {
                if self.lbfgs_c_init <= 0.0 || self.lbfgs_c_growth <= 1.0 {
                    return bad("lbfgs: need c_init > 0 and growth > 1".into());
                }
                if self.lbfgs_inner_iters == 0 {
                    return bad("lbfgs: inner iteration cap must be >= 1".into());
                }
            }
            AttackKind::Deepfool => {
                if self.deepfool_max_iter == 0 {
                    return bad("deepfool: max_iter must be >= 1".into());
                }
                if self.deepfool_overshoot < 0.0 {
                    return bad("deepfool: overshoot must be >= 0".into());
                }
            }
        }
        Ok(())
    }

    /// Compact parameter string for report rows.
    pub fn params_string(&self) -> String {
        match self.kind {
            AttackKind::Ifgsm => format!("eps={},steps={}", self.epsilon, self.steps),
            AttackKind::Pgd => {
                format!("eps={},steps={},radius={}", self.epsilon, self.steps, self.pgd_radius)
            }
            AttackKind::Jsma => format!("theta={},budget={}", self.theta, self.jsma_budget),
            AttackKind::Lbfgs | AttackKind::Deepfool => "default".into(),
        }
    }
}

/// One crafted adversarial example with its distortion bookkeeping.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Tensor32,
    /// The model's label on the unmodified input.
    pub original_label: u8,
    pub adversarial_label: u8,
    /// True exactly when the two labels differ.
    pub success: bool,
    /// Per-cell mean absolute distortion.
    pub l1: f64,
    pub linf: f64,
    pub psnr_db: f64,
    pub iterations_used: usize,
    pub wall_clock_s: f64,
    /// Extra diagnostics (e.g. the failed L-BFGS weight search range).
    pub detail: Option<String>,
}

/// Dispatch on the configured attack kind. Targeted attacks (JSMA, L-BFGS)
/// aim at the class opposite to `true_label`; the others maximize the true
/// label's loss.
pub fn run_attack(
    model: &dyn Classifier,
    x: &Tensor32,
    true_label: u8,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    match cfg.kind {
        AttackKind::Ifgsm => ifgsm(model, x, true_label, cfg),
        AttackKind::Pgd => pgd(model, x, true_label, cfg),
        AttackKind::Deepfool => deepfool(model, x, cfg),
        AttackKind::Jsma => jsma(model, x, 1 - true_label.min(1), cfg),
        AttackKind::Lbfgs => lbfgs(model, x, true_label, 1 - true_label.min(1), cfg),
    }
}

// ---- shared plumbing for the per-attack modules ----

/// Forward one sample-shaped tensor, returning `[2]` logits and the argmax.
pub(crate) fn predict_one(model: &dyn Classifier, x: &Tensor32) -> Result<([f32; 2], u8)> {
    let mut g = Graph::<f32>::new();
    let input = g.leaf(batched(model, x)?);
    let logits = model.logits(&mut g, input)?;
    let v = g.value(logits);
    if v.shape() != [1, 2] {
        return Err(Error::shape("attack", format!("logits shape {:?}", v.shape())));
    }
    let l = [v.data()[0], v.data()[1]];
    Ok((l, argmax2(&l)))
}

/// Softmax probabilities of one sample.
pub(crate) fn predict_probs(model: &dyn Classifier, x: &Tensor32) -> Result<([f32; 2], u8)> {
    let (logits, label) = predict_one(model, x)?;
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    Ok(([e0 / (e0 + e1), e1 / (e0 + e1)], label))
}

/// Cross-entropy of the sample against `label`, plus its input gradient.
pub(crate) fn loss_and_input_grad(
    model: &dyn Classifier,
    x: &Tensor32,
    label: u8,
    attack: &'static str,
) -> Result<(f32, Vec<f32>)> {
    let mut g = Graph::<f32>::new();
    let mut t = batched(model, x)?;
    t.set_requires_grad(true);
    let input = g.leaf(t);
    let logits = model.logits(&mut g, input)?;
    let loss = g.softmax_xent(logits, &[label as usize])?;
    g.backward(loss)?;
    let grad = g.grad(input).expect("input gradient").to_vec();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Attack { attack, reason: "non-finite input gradient".into() });
    }
    Ok((g.value(loss).data()[0], grad))
}

/// Add the batch axis: `[d...] -> [1, d...]`.
pub(crate) fn batched(model: &dyn Classifier, x: &Tensor32) -> Result<Tensor32> {
    let expect = model.sample_shape();
    if x.shape() != expect.as_slice() {
        return Err(Error::shape(
            "attack",
            format!("sample shape {:?}, classifier wants {:?}", x.shape(), expect),
        ));
    }
    let mut shape = vec![1usize];
    shape.extend_from_slice(x.shape());
    x.clone().reshaped(shape)
}

pub(crate) fn clip01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Sign with sign(0) = 0 (f32::signum maps 0 to 1).
pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Assemble the result block: final label, success flag, distortions.
pub(crate) fn finish(
    model: &dyn Classifier,
    original: &Tensor32,
    adversarial: Tensor32,
    original_label: u8,
    iterations_used: usize,
    started: Instant,
    detail: Option<String>,
) -> Result<AttackResult> {
    debug_assert!(adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let (_, adversarial_label) = predict_one(model, &adversarial)?;
    Ok(AttackResult {
        l1: metrics::l1_distortion(original, &adversarial)?,
        linf: metrics::max_abs_distortion(original, &adversarial)?,
        psnr_db: metrics::psnr(original, &adversarial, 1.0)?,
        success: adversarial_label != original_label,
        adversarial,
        original_label,
        adversarial_label,
        iterations_used,
        wall_clock_s: started.elapsed().as_secs_f64(),
        detail,
    })
}

/// Aggregates over one batch run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BatchSummary {
    /// `None` when no sample was eligible (the model already misclassified
    /// every original).
    pub asr: Option<f64>,
    pub mean_psnr_db: f64,
    pub mean_l1: f64,
    pub mean_linf: f64,
    pub n_samples: usize,
    pub n_eligible: usize,
    pub n_failed: usize,
    pub total_wall_clock_s: f64,
}

pub struct BatchOutcome {
    /// One slot per input sample, in input order.
    pub results: Vec<Result<AttackResult>>,
    pub summary: BatchSummary,
}

/// Attack every sample (fanning out across worker threads), collect results
/// in input order, and aggregate. Per-sample errors land in the failure
/// count without aborting the batch.
pub fn run_attack_batch(
    model: &dyn Classifier,
    samples: &[PatchSample],
    cfg: &AttackConfig,
) -> Result<BatchOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("attack batch is empty".into()));
    }
    cfg.validate()?;
    let started = Instant::now();
    let results: Vec<Result<AttackResult>> = samples
        .par_iter()
        .map(|s| run_attack(model, &s.patch, s.label, cfg))
        .collect();

    let mut n_failed = 0;
    let mut eligible = Vec::new();
    for (s, r) in samples.iter().zip(&results) {
        match r {
            Ok(res) if res.original_label == s.label => eligible.push(res),
            Ok(_) => {}
            Err(_) => n_failed += 1,
        }
    }
    let n_eligible = eligible.len();
    let asr = if n_eligible == 0 {
        None
    } else {
        Some(eligible.iter().filter(|r| r.success).count() as f64 / n_eligible as f64)
    };
    let finite_psnrs: Vec<f64> =
        eligible.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
    let mean =
        |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let summary = BatchSummary {
        asr,
        mean_psnr_db: if n_eligible == 0 {
            0.0
        } else if finite_psnrs.is_empty() {
            f64::INFINITY
        } else {
            mean(&finite_psnrs)
        },
        mean_l1: mean(&eligible.iter().map(|r| r.l1).collect::<Vec<_>>()),
        mean_linf: mean(&eligible.iter().map(|r| r.linf).collect::<Vec<_>>()),
        n_samples: samples.len(),
        n_eligible,
        n_failed,
        total_wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(BatchOutcome { results, summary })
}

/// Stack adversarial tensors from results into a `[N,1,64,64]` batch.
pub fn adversarial_batch(results: &[&AttackResult]) -> Result<Tensor32> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results".into()));
    }
    let cells = results[0].adversarial.numel();
    let mut data = Vec::with_capacity(results.len() * cells);
    for r in results {
        data.extend_from_slice(r.adversarial.data());
    }
    Tensor::new([results.len(), 1, crate::data::PATCH_SIDE, crate::data::PATCH_SIDE], data)
}
