//! Declarative construction, training, evaluation, and serialization of the
//! SPRITZ1 / SPRITZ2 CNNs and the LSTM defense classifier.

mod checkpoint;
mod forward;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{forward_graph, lstm_layer};
pub use train::{train, train_to_checkpoint, EpochStats, TrainConfig, TrainReport};

use rand_distr::{Distribution, Normal};

use crate::data::{PatchSample, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Graph, Padding, Tensor, Tensor32, VarId};

/// Layer descriptor. Shapes chain from the input to a 2-logit output.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { out_channels: usize, padding: Padding },
    Relu,
    MaxPool { stride: usize },
    Flatten,
    Dense { out_dim: usize },
    Lstm { hidden_dim: usize },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

/// Architectures this lab ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Spritz1,
    Spritz2,
    Lstm,
}

impl Arch {
    pub fn spec(self) -> ModelSpec {
        match self {
            Arch::Spritz1 => build_spritz1(),
            Arch::Spritz2 => build_spritz2(),
            Arch::Lstm => build_lstm(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Spritz1 => "spritz1",
            Arch::Spritz2 => "spritz2",
            Arch::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spritz1" => Ok(Arch::Spritz1),
            "spritz2" => Ok(Arch::Spritz2),
            "lstm" => Ok(Arch::Lstm),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shallow CNN: nine 3x3/stride-1 conv layers (ReLU), 2x2/stride-2 pools
/// after conv4 and conv8, feature maps halved in the last conv, one dense
/// head. Channels: 32,32,32,32 | 64,64,64,64 | 32.
pub fn build_spritz1() -> ModelSpec {
    let mut layers = Vec::new();
    let channels = [32, 32, 32, 32, 64, 64, 64, 64, 32];
    for (i, &c) in channels.iter().enumerate() {
        layers.push(LayerSpec::Conv { out_channels: c, padding: Padding::Same });
        layers.push(LayerSpec::Relu);
        if i == 3 || i == 7 {
            layers.push(LayerSpec::MaxPool { stride: 2 });
        }
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { out_dim: 2 });
    ModelSpec { name: "spritz1".into(), layers, input_shape: [1, PATCH_SIDE, PATCH_SIDE], num_classes: 2 }
}

/// Deep CNN: fifteen conv layers, pools after conv5 and conv10, feature maps
/// halved in the last conv. Channels: 32x5 | 64x5 | 128x4, 64.
pub fn build_spritz2() -> ModelSpec {
    let mut layers = Vec::new();
    let channels = [32, 32, 32, 32, 32, 64, 64, 64, 64, 64, 128, 128, 128, 128, 64];
    for (i, &c) in channels.iter().enumerate() {
        layers.push(LayerSpec::Conv { out_channels: c, padding: Padding::Same });
        layers.push(LayerSpec::Relu);
        if i == 4 || i == 9 {
            layers.push(LayerSpec::MaxPool { stride: 2 });
        }
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { out_dim: 2 });
    ModelSpec { name: "spritz2".into(), layers, input_shape: [1, PATCH_SIDE, PATCH_SIDE], num_classes: 2 }
}

/// Sequence classifier: a 64x64 patch read as 64 steps of 64-dim rows into a
/// single LSTM (hidden 128) plus a dense head.
pub fn build_lstm() -> ModelSpec {
    ModelSpec {
        name: "lstm".into(),
        layers: vec![LayerSpec::Lstm { hidden_dim: 128 }, LayerSpec::Dense { out_dim: 2 }],
        input_shape: [1, PATCH_SIDE, PATCH_SIDE],
        num_classes: 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeState {
    Image { c: usize, h: usize, w: usize },
    Vector { d: usize },
}

impl ModelSpec {
    /// Check that layer shapes chain from the input to `[num_classes]` logits
    /// and return the per-parameter (name, shape) table in layer order.
    pub fn param_table(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if self.num_classes != 2 {
            return Err(Error::InvalidArgument("binary task: num_classes must be 2".into()));
        }
        let [c0, h0, w0] = self.input_shape;
        let mut state = ShapeState::Image { c: c0, h: h0, w: w0 };
        let mut table = Vec::new();
        let (mut conv_n, mut dense_n, mut lstm_n) = (0, 0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            state = match (layer, state) {
                (LayerSpec::Conv { out_channels, padding }, ShapeState::Image { c, h, w }) => {
                    conv_n += 1;
                    table.push((format!("conv{conv_n}.kernel"), vec![*out_channels, c, 3, 3]));
                    let (oh, ow) = padding.out_dims(h, w);
                    ShapeState::Image { c: *out_channels, h: oh, w: ow }
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::MaxPool { stride }, ShapeState::Image { c, h, w }) => {
                    if !matches!(stride, 1 | 2) {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: pool stride must be 1 or 2"
                        )));
                    }
                    ShapeState::Image { c, h: (h - 2) / stride + 1, w: (w - 2) / stride + 1 }
                }
                (LayerSpec::Flatten, ShapeState::Image { c, h, w }) => ShapeState::Vector { d: c * h * w },
                (LayerSpec::Dense { out_dim }, ShapeState::Vector { d }) => {
                    dense_n += 1;
                    table.push((format!("dense{dense_n}.weight"), vec![d, *out_dim]));
                    table.push((format!("dense{dense_n}.bias"), vec![*out_dim]));
                    ShapeState::Vector { d: *out_dim }
                }
                (LayerSpec::Lstm { hidden_dim }, ShapeState::Image { c, h, w }) if c == 1 => {
                    lstm_n += 1;
                    table.push((format!("lstm{lstm_n}.w_ih"), vec![w, 4 * hidden_dim]));
                    table.push((format!("lstm{lstm_n}.w_hh"), vec![*hidden_dim, 4 * hidden_dim]));
                    table.push((format!("lstm{lstm_n}.bias"), vec![4 * hidden_dim]));
                    let _ = h;
                    ShapeState::Vector { d: *hidden_dim }
                }
                (l, s) => {
                    return Err(Error::shape(
                        "model-spec",
                        format!("layer {i} ({l:?}) cannot follow state {s:?}"),
                    ))
                }
            };
        }
        if state != (ShapeState::Vector { d: self.num_classes }) {
            return Err(Error::shape(
                "model-spec",
                format!("spec `{}` ends in {state:?}, expected [{}] logits", self.name, self.num_classes),
            ));
        }
        Ok(table)
    }

    pub fn conv_layers(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count()
    }

    pub fn pool_layers(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool { .. })).count()
    }

    pub fn dense_layers(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count()
    }

    pub fn is_sequence_model(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Lstm { .. }))
    }
}

/// A spec plus its (trained or freshly initialized) parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    params: Vec<(String, Tensor32)>,
    pub rng_seed: u64,
}

impl Model {
    /// Initialize parameters from the seed: He-normal for conv/dense
    /// weights, scaled normal for the LSTM matrices, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Model> {
        let table = spec.param_table()?;
        let mut rng = stream_rng(seed, "init");
        let params = table
            .into_iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let data: Vec<f32> = if name.ends_with(".bias") {
                    let mut b = vec![0.0; numel];
                    if name.contains("lstm") {
                        // forget-gate block opens near 1 so early time steps
                        // still reach the final state
                        let h = numel / 4;
                        b[h..2 * h].fill(1.0);
                    }
                    b
                } else {
                    let std = if name.contains("conv") {
                        (2.0 / (shape[1] * 9) as f64).sqrt()
                    } else if name.contains("lstm") {
                        (1.0 / shape[0] as f64).sqrt()
                    } else {
                        (2.0 / shape[0] as f64).sqrt()
                    };
                    let dist = Normal::new(0.0, std).expect("std > 0");
                    (0..numel).map(|_| dist.sample(&mut rng) as f32).collect()
                };
                Ok((name, Tensor::new(shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { spec: spec.clone(), params, rng_seed: seed })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: Vec<(String, Tensor32)>,
        rng_seed: u64,
    ) -> Result<Model> {
        let table = spec.param_table()?;
        if table.len() != params.len() {
            return Err(Error::ShapeTable {
                path: std::path::PathBuf::from("<params>"),
                detail: format!("{} parameters, spec wants {}", params.len(), table.len()),
            });
        }
        for ((name, shape), (pname, tensor)) in table.iter().zip(&params) {
            if name != pname || shape != tensor.shape() {
                return Err(Error::ShapeTable {
                    path: std::path::PathBuf::from("<params>"),
                    detail: format!(
                        "expected `{name}` {shape:?}, found `{pname}` {:?}",
                        tensor.shape()
                    ),
                });
            }
        }
        Ok(Model { spec, params, rng_seed })
    }

    pub fn params(&self) -> &[(String, Tensor32)] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<(String, Tensor32)> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters cast to another element type (for the f64 gradient checks).
    pub fn params_as<E: crate::tensor::Element>(&self) -> Vec<(String, Tensor<E>)> {
        self.params.iter().map(|(n, t)| (n.clone(), t.cast::<E>())).collect()
    }

    /// Batched forward pass to logits, probabilities, and argmax labels.
    pub fn predict(&self, batch: &Tensor32) -> Result<Prediction> {
        let batch = normalize_batch(&self.spec, batch)?;
        let mut g = Graph::<f32>::new();
        let input = g.leaf(batch);
        let logits_id = forward_graph(&self.spec, &self.params, &mut g, input)?;
        let probs_id = g.softmax(logits_id)?;
        let logits = g.value(logits_id).data();
        let probs = g.value(probs_id).data();
        let n = g.value(logits_id).shape()[0];
        let mut out = Prediction {
            logits: Vec::with_capacity(n),
            probabilities: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        };
        for i in 0..n {
            let l = [logits[2 * i], logits[2 * i + 1]];
            let p = [probs[2 * i], probs[2 * i + 1]];
            out.labels.push(argmax2(&l));
            out.logits.push(l);
            out.probabilities.push(p);
        }
        Ok(out)
    }

    /// Fraction of samples whose argmax matches the label, evaluated in
    /// batches of `batch_size`.
    pub fn accuracy<'a>(
        &self,
        samples: impl Iterator<Item = &'a PatchSample>,
        batch_size: usize,
    ) -> Result<f64> {
        let samples: Vec<&PatchSample> = samples.collect();
        if samples.is_empty() {
            return Err(Error::InvalidArgument("accuracy over an empty set".into()));
        }
        let mut correct = 0usize;
        for chunk in samples.chunks(batch_size.max(1)) {
            let batch = batch_tensor(chunk)?;
            let pred = self.predict(&batch)?;
            correct += pred.labels.iter().zip(chunk).filter(|(&l, s)| l == s.label).count();
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Argmax over a 2-logit row; ties resolve to class 0.
pub fn argmax2(logits: &[f32; 2]) -> u8 {
    if logits[1] > logits[0] {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vec<[f32; 2]>,
    pub probabilities: Vec<[f32; 2]>,
    pub labels: Vec<u8>,
}

/// Stack patches into a `[N,1,64,64]` batch tensor.
pub fn batch_tensor(samples: &[&PatchSample]) -> Result<Tensor32> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cells = samples[0].patch.numel();
    let mut data = Vec::with_capacity(samples.len() * cells);
    for s in samples {
        data.extend_from_slice(s.patch.data());
    }
    Tensor::new([samples.len(), 1, PATCH_SIDE, PATCH_SIDE], data)
}

fn normalize_batch(spec: &ModelSpec, batch: &Tensor32) -> Result<Tensor32> {
    let s = batch.shape();
    match s.len() {
        4 if s[1] == spec.input_shape[0]
            && s[2] == spec.input_shape[1]
            && s[3] == spec.input_shape[2] =>
        {
            Ok(batch.clone())
        }
        3 if spec.is_sequence_model() && s[1] == spec.input_shape[1] && s[2] == spec.input_shape[2] => {
            batch.clone().reshaped([s[0], 1, s[1], s[2]])
        }
        _ => Err(Error::shape(
            "predict",
            format!("batch {s:?} does not match input shape {:?}", spec.input_shape),
        )),
    }
}

/// Anything attacks can differentiate through: builds logits from an input
/// leaf. Implemented by [`Model`] and by the small closed-form classifiers
/// used in tests.
pub trait Classifier: Sync {
    /// Shape of a single input sample, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;
    /// Extend `g` from `input` (shape `[N, ...sample]`) to `[N,2]` logits.
    fn logits(&self, g: &mut Graph<f32>, input: VarId) -> Result<VarId>;
}

impl Classifier for Model {
    fn sample_shape(&self) -> Vec<usize> {
        self.spec.input_shape.to_vec()
    }

    fn logits(&self, g: &mut Graph<f32>, input: VarId) -> Result<VarId> {
        forward_graph(&self.spec, &self.params, g, input)
    }
}
