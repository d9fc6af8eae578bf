//! Adversarial tensor archive.
//!
//! Layout (integers little-endian): magic `SPAD`, u16 version = 1, u32 entry
//! count, then per entry: source_id string (u32 length + UTF-8), original
//! label u8, 4096 float32 LE original patch values, 4096 float32 LE
//! adversarial values. The byte-exact container is what lets a target
//! network evaluate the exact tensors crafted on the source network, across
//! process boundaries.

use std::path::Path;

use crate::container::{Reader, Writer};
use crate::data::{PATCH_CELLS, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Tensor32};

const MAGIC: [u8; 4] = *b"SPAD";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub source_id: String,
    pub label: u8,
    pub original: Tensor32,
    pub adversarial: Tensor32,
}

#[derive(Debug, Clone, Default)]
pub struct AdversarialArchive {
    pub entries: Vec<ArchiveEntry>,
}

impl AdversarialArchive {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.entries.len() as u32);
        for e in &self.entries {
            if e.original.numel() != PATCH_CELLS || e.adversarial.numel() != PATCH_CELLS {
                return Err(Error::shape(
                    "archive",
                    format!("entry `{}` is not a {PATCH_SIDE}x{PATCH_SIDE} patch", e.source_id),
                ));
            }
            w.str(&e.source_id);
            w.u8(e.label);
            w.f32_slice(e.original.data());
            w.f32_slice(e.adversarial.data());
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<AdversarialArchive> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader::open(&bytes, path, MAGIC, VERSION)?;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let source_id = r.str()?;
            let label = r.u8()?;
            if label > 1 {
                return Err(Error::ShapeTable {
                    path: path.to_path_buf(),
                    detail: format!("entry `{source_id}` has label {label}"),
                });
            }
            let original = Tensor::new([1, PATCH_SIDE, PATCH_SIDE], r.f32_vec(PATCH_CELLS)?)?;
            let adversarial = Tensor::new([1, PATCH_SIDE, PATCH_SIDE], r.f32_vec(PATCH_CELLS)?)?;
            entries.push(ArchiveEntry { source_id, label, original, adversarial });
        }
        if !r.is_exhausted() {
            return Err(Error::ShapeTable {
                path: path.to_path_buf(),
                detail: "trailing bytes after the last entry".into(),
            });
        }
        Ok(AdversarialArchive { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_archive() -> AdversarialArchive {
        let mk = |seed: f32| {
            let data: Vec<f32> =
                (0..PATCH_CELLS).map(|i| (i as f32 * seed).sin() * 0.5 + 0.5).collect();
            Tensor::new([1, PATCH_SIDE, PATCH_SIDE], data).unwrap()
        };
        AdversarialArchive {
            entries: vec![
                ArchiveEntry { source_id: "a".into(), label: 0, original: mk(0.1), adversarial: mk(0.11) },
                ArchiveEntry { source_id: "b".into(), label: 1, original: mk(0.2), adversarial: mk(0.21) },
            ],
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("adv.spad");
        let a = sample_archive();
        a.save(&p).unwrap();
        let loaded = AdversarialArchive::load(&p).unwrap();
        for (x, y) in a.entries.iter().zip(&loaded.entries) {
            assert_eq!(x.source_id, y.source_id);
            assert_eq!(x.label, y.label);
            let bits = |t: &Tensor32| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.original), bits(&y.original));
            assert_eq!(bits(&x.adversarial), bits(&y.adversarial));
        }
        let p2 = dir.path().join("again.spad");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_version_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("adv.spad");
        sample_archive().save(&p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[2] = b'!';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(AdversarialArchive::load(&p), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 7;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(AdversarialArchive::load(&p), Err(Error::BadVersion { .. })));

        std::fs::write(&p, &good[..good.len() - 100]).unwrap();
        assert!(matches!(AdversarialArchive::load(&p), Err(Error::Truncated { .. })));
    }
}
