//! Command-line driver: dataset preparation, training, attacking,
//! transferability suites, defenses, and report rendering.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric or
//! runtime failure.

mod config;

pub use config::{
    AttackSpec, CaseSpec, DefenseFileConfig, GridSpec, SuiteConfig, DEFAULT_IFGSM_EPS_GRID,
    DEFAULT_JSMA_THETA_GRID,
};

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::attack::{run_attack_batch, AdversarialArchive, ArchiveEntry, AttackKind};
use crate::data::{
    generate_synthetic, ingest_domain_strings, ingest_tabular_csv, Dataset, Split, SyntheticSpec,
};
use crate::defense::{arch_mismatch_eval, mpa_finetune, DefenseConfig};
use crate::error::{Error, Result};
use crate::harness::{render_csv, render_markdown, HarnessOptions, ModelRegistry, ScenarioReport, SuiteMatrix};
use crate::model::{load_checkpoint, train_to_checkpoint, Arch, TrainConfig};
use crate::rng::stream_rng;

#[derive(Parser)]
#[command(name = "transfer-bench", version, about = "Adversarial attack transferability lab")]
pub struct Cli {
    /// Worker threads (falls back to TRANSFER_BENCH_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrepareFormat {
    Tabular,
    Domains,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest or generate a dataset and write its binary cache.
    Prepare {
        #[arg(long, value_enum)]
        format: PrepareFormat,
        /// CSV file (tabular) or benign domain list (domains).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Malicious domain list (domains only).
        #[arg(long)]
        malicious: Option<PathBuf>,
        /// Label column name (tabular only).
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Samples per class (synthetic only).
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        separation: f64,
        #[arg(long, default_value_t = 0.12)]
        noise: f64,
        /// Base-pattern variant; different variants give unrelated datasets.
        #[arg(long, default_value_t = 0)]
        variant: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a prepared dataset and write a checkpoint.
    Train {
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        test_batch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one attack over test samples and write an adversarial archive.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        attack: AttackKind,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        /// Samples drawn (seeded) from the test split.
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a transferability suite from a config file.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zero out timestamps and wall clocks in reports.
        #[arg(long, default_value_t = false)]
        deterministic_timing: bool,
    },
    /// Evaluate a defense from a config file.
    Defend {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the summary matrix from a directory of case reports.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point for the thin binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    setup_threads(cli.threads);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::NonFiniteGradient { .. }
        | Error::NonFiniteLoss { .. }
        | Error::Attack { .. }
        | Error::Singularity { .. } => 3,
        _ => 2,
    }
}

fn setup_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("TRANSFER_BENCH_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(crate::data::hex_prefix(&h.finalize(), 16))
}

fn print_effective<T: serde::Serialize>(label: &str, cfg: &T) {
    match toml::to_string(cfg) {
        Ok(text) => {
            println!("[effective-config] {label}");
            for line in text.lines() {
                println!("  {line}");
            }
        }
        Err(_) => println!("[effective-config] {label} (unprintable)"),
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Prepare {
            format,
            input,
            malicious,
            label_column,
            n,
            separation,
            noise,
            variant,
            seed,
            out,
        } => {
            let opts = crate::data::IngestOptions { ratios: (0.6, 0.2, 0.2), seed };
            let (dataset, warnings) = match format {
                PrepareFormat::Synthetic => {
                    let spec = SyntheticSpec {
                        n_per_class: n,
                        class_separation: separation,
                        noise_sigma: noise,
                        seed,
                        variant,
                    };
                    print_effective("prepare.synthetic", &spec);
                    (generate_synthetic(&spec)?, Vec::new())
                }
                PrepareFormat::Tabular => {
                    let input = input
                        .ok_or_else(|| Error::Config("--input is required for tabular".into()))?;
                    let (ds, report) = ingest_tabular_csv(&input, &label_column, &opts)?;
                    (ds, report.warnings())
                }
                PrepareFormat::Domains => {
                    let benign = input
                        .ok_or_else(|| Error::Config("--input is required for domains".into()))?;
                    let malicious = malicious
                        .ok_or_else(|| Error::Config("--malicious is required for domains".into()))?;
                    let (ds, report) = ingest_domain_strings(&benign, &malicious, &opts)?;
                    (ds, report.warnings())
                }
            };
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            dataset.save_cache(&out)?;
            println!("dataset fingerprint: {}", dataset.fingerprint());
            println!(
                "samples: {} (train {} / val {} / test {})",
                dataset.len(),
                dataset.indices(Split::Train).len(),
                dataset.indices(Split::Val).len(),
                dataset.indices(Split::Test).len(),
            );
            println!("cache written: {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { arch, data, epochs, lr, batch, test_batch, seed, out } => {
            let dataset = Dataset::load_cache(&data)?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                train_batch: batch,
                test_batch,
                seed,
            };
            print_effective("train", &cfg);
            let spec = arch.spec();
            let (_, report) = train_to_checkpoint(&spec, &dataset, &cfg, &out)?;
            for (i, e) in report.per_epoch.iter().enumerate() {
                println!(
                    "epoch {:>2}: loss {:.4}  val accuracy {:.4}",
                    i + 1,
                    e.mean_loss,
                    e.val_accuracy
                );
            }
            println!("final test accuracy: {:.4}", report.final_test_accuracy);
            println!("wall clock: {:.1}s", report.wall_clock_s);
            println!("checkpoint: {} (sha256/16 {})", out.display(), file_hash(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { model, data, attack, eps, steps, theta, n, seed, out } => {
            let ckpt = load_checkpoint(&model)?;
            let dataset = Dataset::load_cache(&data)?;
            let spec = AttackSpec {
                kind: attack,
                epsilon: eps,
                steps,
                theta,
                jsma_budget: None,
                jsma_max_iters: None,
                jsma_patience: None,
                jsma_min_progress: None,
                pgd_radius: None,
                pgd_random_start: None,
                lbfgs_c_init: None,
                lbfgs_c_growth: None,
                lbfgs_bisection_steps: None,
                lbfgs_inner_iters: None,
                deepfool_max_iter: None,
                deepfool_overshoot: None,
            };
            let cfg = spec.lower();
            print_effective("attack", &cfg);

            use rand::seq::SliceRandom;
            let mut pool: Vec<&crate::data::PatchSample> =
                dataset.split_samples(Split::Test).collect();
            if pool.is_empty() {
                return Err(Error::InvalidArgument("test split is empty".into()));
            }
            let mut rng = stream_rng(seed, "attack-sampling");
            pool.shuffle(&mut rng);
            let picked: Vec<crate::data::PatchSample> =
                pool.into_iter().take(n).cloned().collect();

            let outcome = run_attack_batch(&ckpt.model, &picked, &cfg)?;
            let mut entries = Vec::new();
            for (s, r) in picked.iter().zip(&outcome.results) {
                if let Ok(r) = r {
                    entries.push(ArchiveEntry {
                        source_id: s.source_id.clone(),
                        label: s.label,
                        original: s.patch.clone(),
                        adversarial: r.adversarial.clone(),
                    });
                }
            }
            AdversarialArchive { entries }.save(&out)?;

            let s = &outcome.summary;
            match s.asr {
                Some(v) => println!("asr_sn: {v:.4} over {} eligible", s.n_eligible),
                None => println!("asr_sn: undefined (no eligible samples)"),
            }
            println!("mean psnr: {:.4} dB", s.mean_psnr_db);
            println!("mean l1 (per cell): {:.6}", s.mean_l1);
            println!("mean linf: {:.4}", s.mean_linf);
            println!("seconds: {:.2}", s.total_wall_clock_s);
            println!("archive: {} ({} entries)", out.display(), picked.len() - s.n_failed);
            if s.n_failed > 0 {
                eprintln!("error: {} sample(s) failed to craft; partial archive written", s.n_failed);
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Transfer { config, out, deterministic_timing } => {
            let cfg = SuiteConfig::load(&config)?;
            let mut registry = ModelRegistry::new();
            for (name, path) in &cfg.datasets {
                registry.insert_dataset(name, Dataset::load_cache(path)?);
            }
            for (net, path) in cfg.model_entries()? {
                let loaded = registry.insert_checkpoint_file(&path, &net.dataset)?;
                if loaded.arch != net.arch {
                    return Err(Error::Config(format!(
                        "checkpoint {} holds a {} model, config says {}",
                        path.display(),
                        loaded.arch,
                        net.arch
                    )));
                }
            }
            let cases = cfg.expand_cases()?;
            let options = HarnessOptions { deterministic_timing, ..Default::default() };
            std::fs::create_dir_all(&out)?;
            let outcome = crate::harness::run_suite(&cases, &registry, &options, Some(&out))?;

            let csv = render_csv(&outcome.matrix)?;
            let md = render_markdown(&outcome.matrix);
            std::fs::write(out.join("summary.csv"), &csv)?;
            std::fs::write(out.join("summary.md"), &md)?;
            print!("{md}");

            let failures: Vec<String> = outcome
                .reports
                .iter()
                .filter_map(|(case, r)| {
                    r.as_ref().err().map(|e| format!("{} {}: {e}", case.scenario, case.fingerprint()))
                })
                .collect();
            for f in &failures {
                eprintln!("warning: case failed: {f}");
            }
            println!(
                "{} case(s), {} failed; reports in {}",
                cases.len(),
                failures.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Defend { config, out } => {
            let cfg = DefenseFileConfig::load(&config)?;
            let dataset = Dataset::load_cache(&cfg.dataset_cache)?;
            let sn = load_checkpoint(&cfg.sn_checkpoint)?.model;
            let tn = load_checkpoint(&cfg.tn_checkpoint)?.model;
            let attacks: Vec<_> = cfg.attacks.iter().map(|a| a.lower()).collect();
            std::fs::create_dir_all(&out)?;
            let report = match cfg.kind.as_str() {
                "mpa-finetune" => {
                    let mut dc = DefenseConfig::mpa_finetune(attacks);
                    if let Some(e) = cfg.finetune_epochs {
                        dc.finetune_epochs = e;
                    }
                    if let Some(r) = cfg.adversarial_mix_ratio {
                        dc.adversarial_mix_ratio = r;
                    }
                    if let Some(s) = cfg.seed {
                        dc.seed = s;
                    }
                    print_effective("defend", &dc);
                    let (defended, report) = mpa_finetune(&tn, &sn, &dataset, &dc)?;
                    crate::model::save_checkpoint(
                        &defended,
                        &TrainConfig { seed: dc.seed, ..Default::default() },
                        dataset.fingerprint(),
                        report.tn_accuracy_after,
                        &out.join("defended.sptz"),
                    )?;
                    report
                }
                "arch-mismatch" => {
                    let lstm_path = cfg.lstm_checkpoint.as_ref().ok_or_else(|| {
                        Error::Config("arch-mismatch needs lstm_checkpoint".into())
                    })?;
                    let lstm = load_checkpoint(lstm_path)?.model;
                    let attack = attacks.first().ok_or_else(|| {
                        Error::Config("arch-mismatch needs one [[attacks]] entry".into())
                    })?;
                    arch_mismatch_eval(&sn, &tn, &lstm, &dataset, attack, cfg.seed.unwrap_or(7))?
                }
                other => return Err(Error::Config(format!("unknown defense kind `{other}`"))),
            };
            let text = toml::to_string_pretty(&report)
                .map_err(|e| Error::Config(format!("report encode: {e}")))?;
            std::fs::write(out.join("defense.toml"), &text)?;
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { input, format, out } => {
            let mut rows = Vec::new();
            let mut names: Vec<PathBuf> = std::fs::read_dir(&input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("case-") && n.ends_with(".toml"))
                })
                .collect();
            names.sort();
            for path in names {
                let report = ScenarioReport::from_toml(&std::fs::read_to_string(&path)?)?;
                rows.push(crate::harness::MatrixRow::from_report(&report));
            }
            let matrix = SuiteMatrix { rows };
            let text = match format {
                ReportFormat::Csv => render_csv(&matrix)?,
                ReportFormat::Md => render_markdown(&matrix),
            };
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
