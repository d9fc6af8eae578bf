//! Enumerate and execute transferability scenarios: craft adversarial
//! examples white-box on the source network, evaluate the identical tensors
//! on the target network, and aggregate the decision metrics.

mod report;

pub use report::{render_csv, render_markdown, MatrixRow, SuiteMatrix};

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::attack::{run_attack_batch, AttackConfig, AttackResult};
use crate::data::{hex_prefix, Dataset, PatchSample, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, ScenarioMetrics};
use crate::model::{batch_tensor, Arch, Model};
use crate::rng::stream_rng;

/// Mismatch pattern between source and target network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Same architecture, different training datasets.
    CrossTraining,
    /// Different architectures, same dataset.
    CrossModel,
    /// Both differ.
    CrossModelAndTraining,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CrossTraining => "cross-training",
            Scenario::CrossModel => "cross-model",
            Scenario::CrossModelAndTraining => "cross-model-and-training",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-training" | "ct" => Ok(Scenario::CrossTraining),
            "cross-model" | "cm" => Ok(Scenario::CrossModel),
            "cross-model-and-training" | "cmt" => Ok(Scenario::CrossModelAndTraining),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// (architecture, dataset) pair naming one trained network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct NetRef {
    pub arch: Arch,
    pub dataset: String,
}

impl NetRef {
    pub fn new(arch: Arch, dataset: impl Into<String>) -> Self {
        NetRef { arch, dataset: dataset.into() }
    }

    pub fn key(&self) -> String {
        format!("{}@{}", self.arch, self.dataset)
    }
}

impl std::fmt::Display for NetRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key())
    }
}

/// One (scenario, SN, TN, attack) experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioCase {
    pub scenario: Scenario,
    pub sn: NetRef,
    pub tn: NetRef,
    pub attack: AttackConfig,
    pub sample_count: usize,
    pub seed: u64,
}

impl ScenarioCase {
    pub fn new(scenario: Scenario, sn: NetRef, tn: NetRef, attack: AttackConfig) -> Self {
        ScenarioCase { scenario, sn, tn, attack, sample_count: 250, seed: 7 }
    }

    /// Content hash identifying the case (used for report file names and
    /// matrix dedup).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(toml::to_string(self).expect("case serializes").as_bytes());
        hex_prefix(&h.finalize(), 16)
    }
}

/// Enforce the declared mismatch pattern; violations name the field.
pub fn validate_case(case: &ScenarioCase) -> Result<()> {
    case.attack.validate()?;
    if case.sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let same_arch = case.sn.arch == case.tn.arch;
    let same_data = case.sn.dataset == case.tn.dataset;
    match case.scenario {
        Scenario::CrossTraining => {
            if !same_arch {
                return Err(Error::ScenarioViolation {
                    field: "arch",
                    detail: format!(
                        "cross-training requires one architecture, got {} vs {}",
                        case.sn.arch, case.tn.arch
                    ),
                });
            }
            if same_data {
                return Err(Error::ScenarioViolation {
                    field: "dataset",
                    detail: "cross-training requires different datasets".into(),
                });
            }
        }
        Scenario::CrossModel => {
            if same_arch {
                return Err(Error::ScenarioViolation {
                    field: "arch",
                    detail: "cross-model requires different architectures".into(),
                });
            }
            if !same_data {
                return Err(Error::ScenarioViolation {
                    field: "dataset",
                    detail: format!(
                        "cross-model requires one dataset, got {} vs {}",
                        case.sn.dataset, case.tn.dataset
                    ),
                });
            }
        }
        Scenario::CrossModelAndTraining => {
            if same_arch {
                return Err(Error::ScenarioViolation {
                    field: "arch",
                    detail: "complete mismatch requires different architectures".into(),
                });
            }
            if same_data {
                return Err(Error::ScenarioViolation {
                    field: "dataset",
                    detail: "complete mismatch requires different datasets".into(),
                });
            }
        }
    }
    Ok(())
}

/// Classify an (SN, TN) pair into its scenario, if any mismatch exists.
pub fn scenario_of(sn: &NetRef, tn: &NetRef) -> Option<Scenario> {
    match (sn.arch == tn.arch, sn.dataset == tn.dataset) {
        (true, true) => None,
        (true, false) => Some(Scenario::CrossTraining),
        (false, true) => Some(Scenario::CrossModel),
        (false, false) => Some(Scenario::CrossModelAndTraining),
    }
}

/// Trained models and datasets addressable by the cases.
#[derive(Default)]
pub struct ModelRegistry {
    models: HashMap<String, (Model, String)>,
    datasets: HashMap<String, Dataset>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_model(&mut self, net: &NetRef, model: Model, checkpoint_fingerprint: String) {
        self.models.insert(net.key(), (model, checkpoint_fingerprint));
    }

    /// Load a checkpoint file and register it under (its architecture,
    /// `dataset`). The registry fingerprint is the hash of the file bytes.
    pub fn insert_checkpoint_file(
        &mut self,
        path: &std::path::Path,
        dataset: &str,
    ) -> Result<NetRef> {
        let bytes = std::fs::read(path)?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let fingerprint = hex_prefix(&h.finalize(), 16);
        let ckpt = crate::model::load_checkpoint(path)?;
        let arch: Arch = ckpt.model.spec.name.parse()?;
        let net = NetRef::new(arch, dataset);
        self.insert_model(&net, ckpt.model, fingerprint);
        Ok(net)
    }

    pub fn insert_dataset(&mut self, name: &str, dataset: Dataset) {
        self.datasets.insert(name.to_string(), dataset);
    }

    pub fn model(&self, net: &NetRef) -> Result<(&Model, &str)> {
        self.models
            .get(&net.key())
            .map(|(m, f)| (m, f.as_str()))
            .ok_or_else(|| Error::MissingCheckpoint(net.key()))
    }

    pub fn dataset(&self, name: &str) -> Result<&Dataset> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::MissingCheckpoint(format!("dataset `{name}`")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HarnessOptions {
    /// Evaluation batch size for the target network.
    pub eval_batch: usize,
    /// Record zeroed timestamps and wall clocks so two runs emit
    /// byte-identical reports.
    pub deterministic_timing: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions { eval_batch: 100, deterministic_timing: false }
    }
}

/// Result of one executed case.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioReport {
    pub case: ScenarioCase,
    pub metrics: ScenarioMetrics,
    pub sn_checkpoint: String,
    pub tn_checkpoint: String,
    pub attack_wall_clock_s: f64,
    /// Unix seconds; zero under deterministic timing.
    pub created_at: u64,
}

impl ScenarioReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("report encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<ScenarioReport> {
        toml::from_str(text).map_err(|e| Error::Config(format!("report decode: {e}")))
    }
}

/// Draw the case's sample set: a seeded shuffle of the SN dataset's test
/// split, keeping the first `sample_count` samples the SN classifies
/// correctly.
fn select_samples<'d>(
    case: &ScenarioCase,
    sn: &Model,
    dataset: &'d Dataset,
    eval_batch: usize,
) -> Result<Vec<&'d PatchSample>> {
    let mut pool: Vec<&PatchSample> = dataset.split_samples(Split::Test).collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "test split of `{}` is empty",
            case.sn.dataset
        )));
    }
    let mut rng = stream_rng(case.seed, "attack-sampling");
    pool.shuffle(&mut rng);
    let mut selected = Vec::with_capacity(case.sample_count);
    for chunk in pool.chunks(eval_batch.max(1)) {
        let pred = sn.predict(&batch_tensor(chunk)?)?;
        for (s, &l) in chunk.iter().zip(&pred.labels) {
            if l == s.label && selected.len() < case.sample_count {
                selected.push(*s);
            }
        }
        if selected.len() >= case.sample_count {
            break;
        }
    }
    Ok(selected)
}

/// Execute one case: craft on the SN, evaluate the same tensors on the TN.
pub fn run_case(
    case: &ScenarioCase,
    registry: &ModelRegistry,
    options: &HarnessOptions,
) -> Result<ScenarioReport> {
    validate_case(case)?;
    let (sn, sn_fp) = registry.model(&case.sn)?;
    let (tn, tn_fp) = registry.model(&case.tn)?;
    let dataset = registry.dataset(&case.sn.dataset)?;
    let started = Instant::now();

    let selected = select_samples(case, sn, dataset, options.eval_batch)?;
    if selected.is_empty() {
        // no eligible samples: the report carries the undefined-ASR marker
        return Ok(ScenarioReport {
            case: case.clone(),
            metrics: ScenarioMetrics {
                asr_sn: None,
                asr_tn: None,
                mean_psnr_db: 0.0,
                mean_l1: 0.0,
                mean_l1_sum: 0.0,
                mean_linf: 0.0,
                n_eligible: 0,
                transferable: None,
            },
            sn_checkpoint: sn_fp.to_string(),
            tn_checkpoint: tn_fp.to_string(),
            attack_wall_clock_s: 0.0,
            created_at: timestamp(options),
        });
    }
    let owned: Vec<PatchSample> = selected.iter().map(|s| (*s).clone()).collect();
    let outcome = run_attack_batch(sn, &owned, &case.attack)?;

    let crafted: Vec<(PatchSample, AttackResult)> = owned
        .into_iter()
        .zip(outcome.results)
        .filter_map(|(s, r)| r.ok().map(|r| (s, r)))
        .collect();
    let metrics = evaluate_metrics(&crafted, tn, options.eval_batch)?;
    Ok(ScenarioReport {
        case: case.clone(),
        metrics,
        sn_checkpoint: sn_fp.to_string(),
        tn_checkpoint: tn_fp.to_string(),
        attack_wall_clock_s: if options.deterministic_timing {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        },
        created_at: timestamp(options),
    })
}

fn timestamp(options: &HarnessOptions) -> u64 {
    if options.deterministic_timing {
        0
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Metrics over a crafted set: SN success from the attack results, TN
/// success on the byte-identical adversarial tensors, distortion means over
/// the SN-eligible samples. With the source network passed as `tn` this
/// reproduces the source ASR exactly (the self-transfer identity).
pub fn evaluate_metrics(
    pairs: &[(PatchSample, AttackResult)],
    tn: &Model,
    eval_batch: usize,
) -> Result<ScenarioMetrics> {
    let true_labels: Vec<u8> = pairs.iter().map(|(s, _)| s.label).collect();
    let sn_orig: Vec<u8> = pairs.iter().map(|(_, r)| r.original_label).collect();
    let sn_adv: Vec<u8> = pairs.iter().map(|(_, r)| r.adversarial_label).collect();
    let asr_sn = metrics::asr_from_labels(&sn_orig, &sn_adv, &true_labels)?;

    let mut tn_orig = Vec::with_capacity(pairs.len());
    let mut tn_adv = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(eval_batch.max(1)) {
        let originals: Vec<&PatchSample> = chunk.iter().map(|(s, _)| s).collect();
        tn_orig.extend(tn.predict(&batch_tensor(&originals)?)?.labels);
        let advs: Vec<&AttackResult> = chunk.iter().map(|(_, r)| r).collect();
        tn_adv.extend(tn.predict(&crate::attack::adversarial_batch(&advs)?)?.labels);
    }
    let asr_tn = metrics::asr_from_labels(&tn_orig, &tn_adv, &true_labels)?;

    let eligible: Vec<&(PatchSample, AttackResult)> =
        pairs.iter().filter(|(s, r)| r.original_label == s.label).collect();
    let mean =
        |xs: Vec<f64>| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let finite_psnrs: Vec<f64> =
        eligible.iter().map(|(_, r)| r.psnr_db).filter(|p| p.is_finite()).collect();
    let mut l1_sums = Vec::with_capacity(eligible.len());
    for (s, r) in eligible.iter() {
        l1_sums.push(metrics::l1_sum(&s.patch, &r.adversarial)?);
    }
    Ok(ScenarioMetrics {
        asr_sn,
        asr_tn,
        mean_psnr_db: if eligible.is_empty() {
            0.0
        } else if finite_psnrs.is_empty() {
            f64::INFINITY
        } else {
            mean(finite_psnrs)
        },
        mean_l1: mean(eligible.iter().map(|(_, r)| r.l1).collect()),
        mean_l1_sum: mean(l1_sums),
        mean_linf: mean(eligible.iter().map(|(_, r)| r.linf).collect()),
        n_eligible: eligible.len(),
        transferable: metrics::decide_transferable(asr_tn),
    })
}

/// Suite outcome: per-case results in input order plus the summary matrix
/// over the successful ones (deduplicated by case fingerprint).
pub struct SuiteOutcome {
    pub reports: Vec<(ScenarioCase, Result<ScenarioReport>)>,
    pub matrix: SuiteMatrix,
}

/// Run every case, recording failures without aborting the suite, and
/// optionally persist one report file per case plus an append-only index.
pub fn run_suite(
    cases: &[ScenarioCase],
    registry: &ModelRegistry,
    options: &HarnessOptions,
    reports_dir: Option<&std::path::Path>,
) -> Result<SuiteOutcome> {
    for case in cases {
        validate_case(case)?;
    }
    if let Some(dir) = reports_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut reports = Vec::with_capacity(cases.len());
    let mut rows: Vec<MatrixRow> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for case in cases {
        let outcome = run_case(case, registry, options);
        if let Ok(report) = &outcome {
            if seen.insert(case.fingerprint()) {
                rows.push(MatrixRow::from_report(report));
            }
            if let Some(dir) = reports_dir {
                persist_report(report, dir)?;
            }
        }
        reports.push((case.clone(), outcome));
    }
    Ok(SuiteOutcome { reports, matrix: SuiteMatrix { rows } })
}

pub fn persist_report(report: &ScenarioReport, dir: &std::path::Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("case-{}.toml", report.case.fingerprint()));
    std::fs::write(&path, report.to_toml()?)?;
    let index = dir.join("index.csv");
    let line = format!(
        "{},{},{},{},{}\n",
        report.case.fingerprint(),
        report.case.scenario,
        report.case.sn.key(),
        report.case.tn.key(),
        path.file_name().unwrap().to_string_lossy(),
    );
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(index)?;
    f.write_all(line.as_bytes())?;
    Ok(path)
}
