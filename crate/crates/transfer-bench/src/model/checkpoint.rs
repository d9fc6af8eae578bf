//! Checkpoint container.
//!
//! Layout (integers little-endian): magic `SPTZ`, u16 version = 1, a
//! u32-length-prefixed UTF-8 TOML header (spec, train config, dataset
//! fingerprint, final test accuracy, init seed), u32 parameter count, then
//! per parameter: name string, u32 dim count, u32 dims, float32 LE payload.
//! Loading a saved model reproduces bit-identical predictions.

use std::path::Path;

use super::{Model, ModelSpec, TrainConfig};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"SPTZ";
const VERSION: u16 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Header {
    spec: ModelSpec,
    train_config: TrainConfig,
    dataset_fingerprint: String,
    final_test_accuracy: f64,
    rng_seed: u64,
}

/// A loaded checkpoint: the model plus its training provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub dataset_fingerprint: String,
    pub final_test_accuracy: f64,
}

pub fn save_checkpoint(
    model: &Model,
    train_config: &TrainConfig,
    dataset_fingerprint: &str,
    final_test_accuracy: f64,
    path: &Path,
) -> Result<()> {
    let header = Header {
        spec: model.spec.clone(),
        train_config: train_config.clone(),
        dataset_fingerprint: dataset_fingerprint.to_string(),
        final_test_accuracy,
        rng_seed: model.rng_seed,
    };
    let header_text =
        toml::to_string(&header).map_err(|e| Error::Config(format!("header encode: {e}")))?;
    let mut w = Writer::new(MAGIC, VERSION);
    w.str(&header_text);
    w.u32(model.params().len() as u32);
    for (name, tensor) in model.params() {
        w.str(name);
        w.u32(tensor.shape().len() as u32);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        w.f32_slice(tensor.data());
    }
    w.write_to(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::open(&bytes, path, MAGIC, VERSION)?;
    let header_text = r.str()?;
    let header: Header = toml::from_str(&header_text)
        .map_err(|e| Error::ShapeTable { path: path.to_path_buf(), detail: format!("header: {e}") })?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let ndims = r.u32()? as usize;
        if ndims == 0 || ndims > 8 {
            return Err(Error::ShapeTable {
                path: path.to_path_buf(),
                detail: format!("parameter `{name}` has {ndims} dims"),
            });
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32_vec(numel)?;
        params.push((name, Tensor::new(shape, data)?));
    }
    let model = Model::from_parts(header.spec, params, header.rng_seed).map_err(|e| match e {
        Error::ShapeTable { detail, .. } => Error::ShapeTable { path: path.to_path_buf(), detail },
        other => other,
    })?;
    Ok(Checkpoint {
        model,
        train_config: header.train_config,
        dataset_fingerprint: header.dataset_fingerprint,
        final_test_accuracy: header.final_test_accuracy,
    })
}
