//! Seeded, single-writer training loop: Adam over mini-batches with
//! per-epoch validation. Two runs with the same seed and data produce
//! bit-identical parameters.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{batch_tensor, Model, ModelSpec};
use crate::data::{Dataset, PatchSample, Split};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{adam_step, AdamParams, AdamState, Graph};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_batch: usize,
    pub test_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, learning_rate: 1e-4, train_batch: 64, test_batch: 100, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.train_batch == 0 || self.test_batch == 0 {
            return Err(Error::InvalidArgument(format!("bad train config: {self:?}")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { learning_rate: self.learning_rate, ..AdamParams::default() }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub per_epoch: Vec<EpochStats>,
    /// Every batch loss in execution order (all epochs concatenated).
    pub batch_losses: Vec<f64>,
    pub final_test_accuracy: f64,
    pub wall_clock_s: f64,
}

/// Train a fresh model of `spec` on the dataset's train split.
pub fn train(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let mut model = Model::init(spec, config.seed)?;

    let test: Vec<&PatchSample> = dataset.split_samples(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let train_idx: Vec<u32> = dataset.indices(Split::Train).to_vec();
    let val: Vec<&PatchSample> = dataset.split_samples(Split::Val).collect();
    if config.epochs > 0 && (train_idx.is_empty() || val.is_empty()) {
        return Err(Error::InvalidArgument("train/val split is empty".into()));
    }

    let mut states: Vec<AdamState> = model
        .params()
        .iter()
        .map(|(_, t)| AdamState::new(t.numel(), config.adam()))
        .collect();

    let mut shuffle_rng = stream_rng(config.seed, "shuffle");
    let mut report = TrainReport {
        config: config.clone(),
        dataset_fingerprint: dataset.fingerprint().to_string(),
        per_epoch: Vec::with_capacity(config.epochs),
        batch_losses: Vec::new(),
        final_test_accuracy: 0.0,
        wall_clock_s: 0.0,
    };

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(config.train_batch).enumerate() {
            let samples: Vec<&PatchSample> = chunk.iter().map(|&i| &dataset.samples()[i as usize]).collect();
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
            let logits = forward_with_leaves(&model.spec, &mut g, input, &param_ids)?;
            let loss = g.softmax_xent(logits, &labels)?;
            let loss_v = g.value(loss).data()[0] as f64;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no, loss: loss_v });
            }
            g.backward(loss)?;

            for ((pid, (name, param)), state) in
                param_ids.iter().zip(model.params_mut().iter_mut()).zip(states.iter_mut())
            {
                let grad = g.grad(*pid).expect("leaf gradient populated");
                adam_step(name, param, grad, state)?;
            }
            report.batch_losses.push(loss_v);
            epoch_loss += loss_v;
            batches += 1;
        }
        let val_accuracy = model.accuracy(val.iter().copied(), config.test_batch)?;
        report.per_epoch.push(EpochStats { mean_loss: epoch_loss / batches.max(1) as f64, val_accuracy });
    }

    report.final_test_accuracy = model.accuracy(test.iter().copied(), config.test_batch)?;
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}

/// [`train`] plus a checkpoint written on completion.
pub fn train_to_checkpoint(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    path: &Path,
) -> Result<(Model, TrainReport)> {
    let (model, report) = train(spec, dataset, config)?;
    super::save_checkpoint(&model, config, dataset.fingerprint(), report.final_test_accuracy, path)?;
    Ok((model, report))
}

/// Forward pass over already-inserted parameter leaves (training needs the
/// leaf ids to read gradients back out).
fn forward_with_leaves(
    spec: &ModelSpec,
    g: &mut Graph<f32>,
    input: crate::tensor::VarId,
    param_ids: &[crate::tensor::VarId],
) -> Result<crate::tensor::VarId> {
    // Rebuild the (name, tensor) list the generic walker expects, but leafed
    // already; forward_graph would re-insert tensors, so walk here instead.
    use super::LayerSpec;
    let mut cursor = 0;
    let mut next = || {
        let id = param_ids[cursor];
        cursor += 1;
        id
    };
    let mut x = input;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { padding, .. } => {
                let k = next();
                x = g.conv2d(x, k, *padding)?;
            }
            LayerSpec::Relu => x = g.relu(x),
            LayerSpec::MaxPool { stride } => x = g.maxpool2d(x, *stride)?,
            LayerSpec::Flatten => {
                let s = g.value(x).shape().to_vec();
                let n = s[0];
                let rest: usize = s[1..].iter().product();
                x = g.reshape(x, [n, rest])?;
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
                let (h, _) = super::lstm_layer(g, x, w_ih, w_hh, bias, *hidden_dim)?;
                x = h;
            }
        }
    }
    Ok(x)
}
