//! Two defenses against transferable attacks: fine-tuning the target network
//! on examples from the attacks that proved transferable, and swapping the
//! target architecture from CNN to LSTM. The attacker's source network is
//! never modified.

use rand::seq::SliceRandom;

use crate::attack::{run_attack_batch, AttackConfig};
use crate::data::{Dataset, PatchSample, Split};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{batch_tensor, lstm_layer, Model, TrainConfig};
use crate::rng::stream_rng;
use crate::tensor::{adam_step, AdamState, Graph, Tensor32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseKind {
    MpaFinetune,
    ArchMismatch,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Attack configurations the harness flagged transferable.
    pub mpa_attacks: Vec<AttackConfig>,
    pub finetune_epochs: usize,
    /// Fraction of adversarial examples in the fine-tuning set, in (0,1].
    /// 0.5 pairs every clean training sample with one adversarial example;
    /// 1.0 fine-tunes on adversarial examples only.
    pub adversarial_mix_ratio: f64,
    pub seed: u64,
}

impl DefenseConfig {
    pub fn mpa_finetune(mpa_attacks: Vec<AttackConfig>) -> Self {
        DefenseConfig {
            kind: DefenseKind::MpaFinetune,
            mpa_attacks,
            finetune_epochs: 5,
            adversarial_mix_ratio: 0.5,
            seed: 7,
        }
    }

    pub fn arch_mismatch() -> Self {
        DefenseConfig {
            kind: DefenseKind::ArchMismatch,
            mpa_attacks: Vec::new(),
            finetune_epochs: 0,
            adversarial_mix_ratio: 0.5,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DefenseKind::MpaFinetune {
            if self.mpa_attacks.is_empty() {
                return Err(Error::InvalidArgument(
                    "MPA fine-tuning needs at least one transferable attack".into(),
                ));
            }
            if !(self.adversarial_mix_ratio > 0.0 && self.adversarial_mix_ratio <= 1.0) {
                return Err(Error::InvalidArgument(
                    "adversarial_mix_ratio must be in (0,1]".into(),
                ));
            }
            if self.finetune_epochs == 0 {
                return Err(Error::InvalidArgument("finetune_epochs must be >= 1".into()));
            }
        }
        for a in &self.mpa_attacks {
            a.validate()?;
        }
        Ok(())
    }
}

/// Before/after comparison on one fixed adversarial evaluation set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DefenseReport {
    pub defense: DefenseConfig,
    pub pre_asr_tn: Option<f64>,
    pub post_asr_tn: Option<f64>,
    pub tn_accuracy_before: f64,
    pub tn_accuracy_after: f64,
    /// Samples in the paired evaluation set.
    pub n_eval: usize,
}

/// Craft an adversarial evaluation set on the SN from the test split:
/// seeded shuffle, first `count` SN-correct samples.
fn craft_eval_set(
    sn: &Model,
    dataset: &Dataset,
    attack: &AttackConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<PatchSample>, Vec<Tensor32>)> {
    let mut pool: Vec<&PatchSample> = dataset.split_samples(Split::Test).collect();
    let mut rng = stream_rng(seed, "defense-eval");
    pool.shuffle(&mut rng);
    let mut picked = Vec::with_capacity(count);
    for chunk in pool.chunks(100) {
        let pred = sn.predict(&batch_tensor(chunk)?)?;
        for (s, &l) in chunk.iter().zip(&pred.labels) {
            if l == s.label && picked.len() < count {
                picked.push((*s).clone());
            }
        }
        if picked.len() >= count {
            break;
        }
    }
    if picked.is_empty() {
        return Err(Error::InvalidArgument("no eligible evaluation samples".into()));
    }
    let outcome = run_attack_batch(sn, &picked, attack)?;
    let mut samples = Vec::new();
    let mut advs = Vec::new();
    for (s, r) in picked.iter().zip(outcome.results) {
        if let Ok(r) = r {
            samples.push(s.clone());
            advs.push(r.adversarial);
        }
    }
    Ok((samples, advs))
}

/// Fine-tune a copy of the target network on a mix of clean training samples
/// and adversarial examples crafted on the source network (true labels).
/// Reports the paired ASR drop and the clean-accuracy change.
pub fn mpa_finetune(
    tn_model: &Model,
    sn_model: &Model,
    dataset: &Dataset,
    cfg: &DefenseConfig,
) -> Result<(Model, DefenseReport)> {
    cfg.validate()?;
    if cfg.kind != DefenseKind::MpaFinetune {
        return Err(Error::InvalidArgument("config kind is not MPA fine-tuning".into()));
    }

    // paired evaluation set from the *first* configured attack
    let eval_attack = &cfg.mpa_attacks[0];
    let (eval_samples, eval_advs) = craft_eval_set(sn_model, dataset, eval_attack, 100, cfg.seed)?;
    let pre_asr_tn = metrics::asr(tn_model, &eval_samples, &eval_advs, 100)?;
    let tn_accuracy_before = tn_model.accuracy(dataset.split_samples(Split::Test), 100)?;

    // fine-tuning set: clean train split + adversarial examples crafted on
    // the SN from train-split samples, apportioned per attack
    let clean: Vec<PatchSample> = dataset.split_samples(Split::Train).cloned().collect();
    if clean.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let r = cfg.adversarial_mix_ratio;
    let n_adv_total = if r >= 1.0 {
        clean.len()
    } else {
        ((r / (1.0 - r)) * clean.len() as f64).ceil() as usize
    }
    .min(4 * clean.len());

    let mut shuffled = clean.clone();
    let mut rng = stream_rng(cfg.seed, "defense-craft");
    shuffled.shuffle(&mut rng);
    let mut adv_samples: Vec<PatchSample> = Vec::with_capacity(n_adv_total);
    let per_attack = n_adv_total.div_ceil(cfg.mpa_attacks.len());
    for (ai, attack) in cfg.mpa_attacks.iter().enumerate() {
        let lo = (ai * per_attack).min(shuffled.len());
        let hi = ((ai + 1) * per_attack).min(shuffled.len()).min(n_adv_total);
        if lo >= hi {
            break;
        }
        let chunk = &shuffled[lo..hi];
        let outcome = run_attack_batch(sn_model, chunk, attack)?;
        for (s, res) in chunk.iter().zip(outcome.results) {
            if let Ok(res) = res {
                adv_samples.push(PatchSample {
                    patch: res.adversarial,
                    label: s.label,
                    source_id: format!("{}+{}", s.source_id, attack.kind),
                });
            }
        }
    }

    let mut finetune_set: Vec<PatchSample> = if r >= 1.0 { Vec::new() } else { clean };
    finetune_set.extend(adv_samples);

    let defended = finetune_model(tn_model, &finetune_set, cfg)?;

    let post_asr_tn = metrics::asr(&defended, &eval_samples, &eval_advs, 100)?;
    let tn_accuracy_after = defended.accuracy(dataset.split_samples(Split::Test), 100)?;
    let report = DefenseReport {
        defense: cfg.clone(),
        pre_asr_tn,
        post_asr_tn,
        tn_accuracy_before,
        tn_accuracy_after,
        n_eval: eval_samples.len(),
    };
    Ok((defended, report))
}

/// Continue training a copy of the model on the given set (fresh Adam state,
/// the model's default learning rate).
fn finetune_model(base: &Model, set: &[PatchSample], cfg: &DefenseConfig) -> Result<Model> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning set is empty".into()));
    }
    let mut model = base.clone();
    let train_cfg = TrainConfig { seed: cfg.seed, ..TrainConfig::default() };
    let mut states: Vec<AdamState> =
        model.params().iter().map(|(_, t)| AdamState::new(t.numel(), train_cfg.adam())).collect();
    let mut rng = stream_rng(cfg.seed, "defense-shuffle");
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.finetune_epochs {
        order.shuffle(&mut rng);
        for (batch_no, chunk) in order.chunks(train_cfg.train_batch).enumerate() {
            let samples: Vec<&PatchSample> = chunk.iter().map(|&i| &set[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();
            let batch = batch_tensor(&samples)?;
            let mut g = Graph::<f32>::new();
            let input = g.leaf(batch);
            let param_ids: Vec<_> = model
                .params()
                .iter()
                .map(|(_, t)| {
                    let mut t = t.clone();
                    t.set_requires_grad(true);
                    g.leaf(t)
                })
                .collect();
            let logits = forward_leaves(&model, &mut g, input, &param_ids)?;
            let loss = g.softmax_xent(logits, &labels)?;
            let loss_v = g.value(loss).data()[0] as f64;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no, loss: loss_v });
            }
            g.backward(loss)?;
            for ((pid, (name, param)), state) in
                param_ids.iter().zip(model.params_mut().iter_mut()).zip(states.iter_mut())
            {
                adam_step(name, param, g.grad(*pid).expect("grad"), state)?;
            }
        }
    }
    Ok(model)
}

fn forward_leaves(
    model: &Model,
    g: &mut Graph<f32>,
    input: crate::tensor::VarId,
    param_ids: &[crate::tensor::VarId],
) -> Result<crate::tensor::VarId> {
    use crate::model::LayerSpec;
    let mut cursor = 0;
    let mut next = || {
        let id = param_ids[cursor];
        cursor += 1;
        id
    };
    let mut x = input;
    for layer in &model.spec.layers {
        match layer {
            LayerSpec::Conv { padding, .. } => {
                let k = next();
                x = g.conv2d(x, k, *padding)?;
            }
            LayerSpec::Relu => x = g.relu(x),
            LayerSpec::MaxPool { stride } => x = g.maxpool2d(x, *stride)?,
            LayerSpec::Flatten => {
                let s = g.value(x).shape().to_vec();
                let rest: usize = s[1..].iter().product();
                x = g.reshape(x, [s[0], rest])?;
            }
            LayerSpec::Dense { .. } => {
                let w = next();
                let b = next();
                x = g.dense(x, w, b)?;
            }
            LayerSpec::Lstm { hidden_dim } => {
                let w_ih = next();
                let w_hh = next();
                let bias = next();
                let (h, _) = lstm_layer(g, x, w_ih, w_hh, bias, *hidden_dim)?;
                x = h;
            }
        }
    }
    Ok(x)
}

/// Evaluate the CNN-to-LSTM architecture switch: craft on the CNN source
/// network, report the ASR on the CNN target and on an LSTM target trained
/// on the same dataset.
pub fn arch_mismatch_eval(
    sn_cnn: &Model,
    cnn_tn: &Model,
    lstm_tn: &Model,
    dataset: &Dataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<DefenseReport> {
    if !lstm_tn.spec.is_sequence_model() {
        return Err(Error::InvalidArgument("mismatch target must be the LSTM".into()));
    }
    let (eval_samples, eval_advs) = craft_eval_set(sn_cnn, dataset, attack, 100, seed)?;
    // "pre" is the original CNN target, "post" the LSTM target
    let pre = metrics::asr(cnn_tn, &eval_samples, &eval_advs, 100)?;
    let post = metrics::asr(lstm_tn, &eval_samples, &eval_advs, 100)?;
    Ok(DefenseReport {
        defense: DefenseConfig { mpa_attacks: vec![attack.clone()], ..DefenseConfig::arch_mismatch() },
        pre_asr_tn: pre,
        post_asr_tn: post,
        tn_accuracy_before: cnn_tn.accuracy(dataset.split_samples(Split::Test), 100)?,
        tn_accuracy_after: lstm_tn.accuracy(dataset.split_samples(Split::Test), 100)?,
        n_eval: eval_samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mix_ratio_is_rejected() {
        let mut cfg = DefenseConfig::mpa_finetune(vec![AttackConfig::ifgsm(0.1, 10)]);
        cfg.adversarial_mix_ratio = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn empty_attack_list_is_rejected() {
        let cfg = DefenseConfig::mpa_finetune(vec![]);
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mix_ratio_upper_bound_is_inclusive() {
        let mut cfg = DefenseConfig::mpa_finetune(vec![AttackConfig::ifgsm(0.1, 10)]);
        cfg.adversarial_mix_ratio = 1.0;
        cfg.validate().unwrap();
        cfg.adversarial_mix_ratio = 1.1;
        assert!(cfg.validate().is_err());
    }
}
