//! Binary dataset cache.
//!
//! Layout (all integers little-endian):
//! magic `SPDZ`, u16 version = 1, fingerprint string, provenance string,
//! u32 sample count, then per sample: source_id string, label u8, 4096 f32
//! patch values; then the train/val/test index lists (u32 count + u32 each).
//! Strings are u32-length-prefixed UTF-8.

use std::path::Path;

use super::{Dataset, PatchSample, Provenance, PATCH_CELLS, PATCH_SIDE};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"SPDZ";
const VERSION: u16 = 1;

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.str(ds.fingerprint());
    w.str(ds.provenance().as_str());
    w.u32(ds.len() as u32);
    for s in ds.samples() {
        w.str(&s.source_id);
        w.u8(s.label);
        w.f32_slice(s.patch.data());
    }
    for split in [super::Split::Train, super::Split::Val, super::Split::Test] {
        w.u32_slice(ds.indices(split));
    }
    w.write_to(path)
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::open(&bytes, path, MAGIC, VERSION)?;
    let fingerprint = r.str()?;
    let provenance = Provenance::parse(&r.str()?)?;
    let n = r.u32()? as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let source_id = r.str()?;
        let label = r.u8()?;
        let patch = r.f32_vec(PATCH_CELLS)?;
        samples.push(PatchSample::new(
            Tensor::new([1, PATCH_SIDE, PATCH_SIDE], patch)?,
            label,
            source_id,
        )?);
    }
    let train = r.u32_vec()?;
    let val = r.u32_vec()?;
    let test = r.u32_vec()?;
    for part in [&train, &val, &test] {
        if let Some(&bad) = part.iter().find(|&&i| i as usize >= n) {
            return Err(Error::ShapeTable {
                path: path.to_path_buf(),
                detail: format!("split index {bad} out of range 0..{n}"),
            });
        }
    }
    let ds = Dataset::from_parts(samples, train, val, test, provenance);
    if ds.fingerprint() != fingerprint {
        return Err(Error::ShapeTable {
            path: path.to_path_buf(),
            detail: format!("fingerprint mismatch: stored {fingerprint}, recomputed {}", ds.fingerprint()),
        });
    }
    Ok(ds)
}
