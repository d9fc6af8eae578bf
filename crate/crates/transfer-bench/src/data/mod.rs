//! Turn tabular traffic records, domain-name strings, or synthetic generators
//! into labeled 64x64 grayscale patches with train/val/test splits.

mod cache;
mod domains;
mod synthetic;
mod tabular;

pub use domains::ingest_domain_strings;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use tabular::{ingest_tabular_csv, IngestOptions};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor32;

pub const PATCH_SIDE: usize = 64;
pub const PATCH_CELLS: usize = PATCH_SIDE * PATCH_SIDE;

pub const LABEL_BENIGN: u8 = 0;
pub const LABEL_MALICIOUS: u8 = 1;

/// One 64x64 grayscale input in `[0,1]` with its binary label.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub patch: Tensor32,
    pub label: u8,
    pub source_id: String,
}

impl PatchSample {
    pub fn new(patch: Tensor32, label: u8, source_id: impl Into<String>) -> Result<Self> {
        if patch.shape() != [1, PATCH_SIDE, PATCH_SIDE] {
            return Err(Error::shape(
                "patch",
                format!("expected [1,{PATCH_SIDE},{PATCH_SIDE}], got {:?}", patch.shape()),
            ));
        }
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} outside {{0,1}}")));
        }
        if patch.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("patch values outside [0,1]".into()));
        }
        Ok(PatchSample { patch, label, source_id: source_id.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TabularCsv,
    DomainStrings,
    Synthetic,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::TabularCsv => "tabular-csv",
            Provenance::DomainStrings => "domain-strings",
            Provenance::Synthetic => "synthetic",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular-csv" => Ok(Provenance::TabularCsv),
            "domain-strings" => Ok(Provenance::DomainStrings),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(Error::InvalidArgument(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Immutable labeled dataset with disjoint, exhaustive splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<PatchSample>,
    train: Vec<u32>,
    val: Vec<u32>,
    test: Vec<u32>,
    fingerprint: String,
    provenance: Provenance,
}

/// Per-file diagnostics emitted by the ingestion routines.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    /// Feature columns where min == max on the train split (mapped to 0.5).
    pub constant_columns: Vec<String>,
    /// Empty input lines skipped.
    pub skipped_empty_lines: usize,
    /// Domains that appear with both labels.
    pub label_conflicts: Vec<String>,
}

impl IngestReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.constant_columns {
            out.push(format!("constant feature column `{c}` mapped to 0.5"));
        }
        if self.skipped_empty_lines > 0 {
            out.push(format!("skipped {} empty line(s)", self.skipped_empty_lines));
        }
        for d in &self.label_conflicts {
            out.push(format!("domain `{d}` appears with both labels"));
        }
        out
    }
}

impl Dataset {
    /// Build a dataset from samples plus stratified splits.
    pub fn with_split(
        samples: Vec<PatchSample>,
        provenance: Provenance,
        ratios: (f64, f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        let (train, val, test) = stratified_split(&samples, ratios, seed)?;
        let mut ds = Dataset { samples, train, val, test, fingerprint: String::new(), provenance };
        ds.fingerprint = ds.compute_fingerprint();
        Ok(ds)
    }

    /// Re-split the same samples with new ratios.
    pub fn resplit(&self, ratios: (f64, f64, f64), seed: u64) -> Result<Self> {
        Dataset::with_split(self.samples.clone(), self.provenance, ratios, seed)
    }

    pub fn samples(&self) -> &[PatchSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &PatchSample> {
        self.indices(split).iter().map(|&i| &self.samples[i as usize])
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Content hash over provenance, samples, and splits.
    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.provenance.as_str().as_bytes());
        h.update((self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.source_id.len() as u64).to_le_bytes());
            h.update(s.source_id.as_bytes());
            h.update([s.label]);
            for v in s.patch.data() {
                h.update(v.to_le_bytes());
            }
        }
        for part in [&self.train, &self.val, &self.test] {
            h.update((part.len() as u64).to_le_bytes());
            for i in part {
                h.update(i.to_le_bytes());
            }
        }
        let digest = h.finalize();
        hex_prefix(&digest, 16)
    }

    pub fn save_cache(&self, path: &std::path::Path) -> Result<()> {
        cache::save(self, path)
    }

    pub fn load_cache(path: &std::path::Path) -> Result<Dataset> {
        cache::load(path)
    }

    pub(crate) fn from_parts(
        samples: Vec<PatchSample>,
        train: Vec<u32>,
        val: Vec<u32>,
        test: Vec<u32>,
        provenance: Provenance,
    ) -> Self {
        let mut ds =
            Dataset { samples, train, val, test, fingerprint: String::new(), provenance };
        ds.fingerprint = ds.compute_fingerprint();
        ds
    }
}

pub(crate) fn hex_prefix(digest: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars + 2);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

/// Stratified split: per-class seeded shuffle, largest-remainder allocation.
/// Class balance in each split is preserved within one sample.
fn stratified_split(
    samples: &[PatchSample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>, Vec<u32>)> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(seed, "split");
    let mut out: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class in [LABEL_BENIGN, LABEL_MALICIOUS] {
        let mut idx: Vec<u32> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i as u32)
            .collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("no samples with label {class}")));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let counts = largest_remainder(n, [rt, rv, rs]);
        for (part, &count) in counts.iter().enumerate() {
            if count == 0 && [rt, rv, rs][part] > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "split {part} would be empty for label {class} (n = {n}, ratios {ratios:?})"
                )));
            }
        }
        let mut cursor = 0;
        for (part, &count) in counts.iter().enumerate() {
            out[part].extend_from_slice(&idx[cursor..cursor + count]);
            cursor += count;
        }
    }
    let [train, val, test] = out;
    Ok((train, val, test))
}

fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2]]
}
