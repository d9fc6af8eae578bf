//! End-to-end checks of the command-line surface: exit codes, printed
//! fingerprints, and file outputs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_transfer-bench")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn prepare_synthetic_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.spdz");
    let out2 = dir.path().join("b.spdz");
    let args = |out: &Path| {
        vec![
            "prepare".to_string(),
            "--format".into(),
            "synthetic".into(),
            "--n".into(),
            "20".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let o1 = Command::new(bin()).args(args(&out1)).output().unwrap();
    assert_eq!(code(&o1), 0, "{o1:?}");
    let fp1 = stdout(&o1).lines().find(|l| l.contains("fingerprint")).unwrap().to_string();
    let o2 = Command::new(bin()).args(args(&out2)).output().unwrap();
    let fp2 = stdout(&o2).lines().find(|l| l.contains("fingerprint")).unwrap().to_string();
    assert_eq!(fp1, fp2);
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn malformed_csv_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,label\n1,0\nnotanumber,1\n").unwrap();
    let o = run(&[
        "prepare",
        "--format",
        "tabular",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        dir.path().join("x.spdz").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":3"), "missing line number: {err}");
}

#[test]
fn train_zero_epochs_writes_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.spdz");
    run(&["prepare", "--format", "synthetic", "--n", "20", "--out", data.to_str().unwrap()]);
    let ckpt = dir.path().join("m.sptz");
    let o = run(&[
        "train",
        "--arch",
        "lstm",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "0",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.exists());
    let acc_line = stdout(&o).lines().find(|l| l.contains("final test accuracy")).unwrap().to_string();
    let acc: f64 = acc_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((0.2..=0.8).contains(&acc), "untrained accuracy {acc}");
}

#[test]
fn train_same_seed_same_checkpoint_hash() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.spdz");
    run(&["prepare", "--format", "synthetic", "--n", "16", "--out", data.to_str().unwrap()]);
    let hash_of = |name: &str| -> String {
        let ckpt = dir.path().join(name);
        let o = run(&[
            "train",
            "--arch",
            "lstm",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "1",
            "--batch",
            "8",
            "--out",
            ckpt.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        stdout(&o).lines().find(|l| l.contains("sha256/16")).unwrap().to_string()
    };
    assert_eq!(hash_of("a.sptz"), hash_of("b.sptz"));
}

#[test]
fn attack_single_sample_archive_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.spdz");
    run(&["prepare", "--format", "synthetic", "--n", "20", "--out", data.to_str().unwrap()]);
    let ckpt = dir.path().join("m.sptz");
    run(&[
        "train",
        "--arch",
        "lstm",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "8",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    let archive = dir.path().join("adv.spad");
    let o = run(&[
        "attack",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--attack",
        "ifgsm",
        "--eps",
        "0.05",
        "--n",
        "1",
        "--out",
        archive.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let loaded = transfer_bench::attack::AdversarialArchive::load(&archive).unwrap();
    assert_eq!(loaded.entries.len(), 1);
    // resave: byte-identical
    let again = dir.path().join("again.spad");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&archive).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn empty_suite_renders_empty_outputs_and_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.toml");
    std::fs::write(&cfg, "[datasets]\n[models]\n").unwrap();
    let out = dir.path().join("reports");
    let o = run(&["transfer", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
    assert!(out.join("summary.md").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.toml");
    std::fs::write(&cfg, "[datasets]\n[models]\nnot_a_key = 1\n").unwrap();
    let o = run(&[
        "transfer",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn report_renders_markdown_with_bold_transferable_rows() {
    let dir = tempfile::tempdir().unwrap();
    // hand-write two case reports, one transferable
    let mk = |asr_tn: f64, name: &str| {
        let text = format!(
            r#"sn_checkpoint = "abc"
tn_checkpoint = "def"
attack_wall_clock_s = 1.0
created_at = 0

[case]
scenario = "cross-model"
sample_count = 10
seed = 1

[case.sn]
arch = "spritz1"
dataset = "A"

[case.tn]
arch = "spritz2"
dataset = "A"

[case.attack]
kind = "ifgsm"
epsilon = 0.1
steps = 10
theta = 0.1
jsma_budget = 0.1
jsma_patience = 24
jsma_min_progress = 0.005
pgd_radius = 0.1
pgd_random_start = false
lbfgs_c_init = 0.01
lbfgs_c_growth = 10.0
lbfgs_bisection_steps = 10
lbfgs_inner_iters = 15
deepfool_max_iter = 50
deepfool_overshoot = 0.02

[metrics]
asr_sn = 1.0
asr_tn = {asr_tn}
mean_psnr_db = 40.0
mean_l1 = 0.001
mean_l1_sum = 4.0
mean_linf = 0.1
n_eligible = 10
transferable = {}
"#,
            asr_tn > 0.5
        );
        std::fs::write(dir.path().join(name), text).unwrap();
    };
    mk(0.9, "case-aaaa.toml");
    mk(0.1, "case-bbbb.toml");
    let o = run(&["report", "--in", dir.path().to_str().unwrap(), "--format", "md"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = stdout(&o);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 4);
    let bold: Vec<bool> = lines[2..].iter().map(|l| l.contains("**")).collect();
    assert_eq!(bold.iter().filter(|&&b| b).count(), 1, "{md}");
}
