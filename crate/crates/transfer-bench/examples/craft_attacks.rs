//! Craft adversarial examples with all five attacks against one trained
//! classifier and compare their success and distortion profiles.
//!
//! ```bash
//! cargo run --release --example craft_attacks
//! ```

use transfer_bench::attack::{run_attack_batch, AttackConfig};
use transfer_bench::data::{generate_synthetic, PatchSample, Split, SyntheticSpec};
use transfer_bench::model::{build_spritz1, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(&SyntheticSpec { n_per_class: 120, ..Default::default() })?;
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let (model, report) = train(&build_spritz1(), &dataset, &cfg)?;
    println!("source network test accuracy: {:.4}\n", report.final_test_accuracy);

    let samples: Vec<PatchSample> = dataset.split_samples(Split::Test).take(12).cloned().collect();
    let attacks = [
        AttackConfig::ifgsm(0.1, 10),
        AttackConfig::ifgsm(0.001, 10),
        AttackConfig::jsma(0.1),
        AttackConfig::lbfgs(),
        AttackConfig::pgd(),
        AttackConfig::deepfool(),
    ];
    println!(
        "{:<10} {:<22} {:>7} {:>10} {:>10} {:>8} {:>8}",
        "attack", "params", "asr_sn", "psnr(dB)", "l1/cell", "linf", "sec"
    );
    for cfg in attacks {
        let out = run_attack_batch(&model, &samples, &cfg)?;
        let s = out.summary;
        println!(
            "{:<10} {:<22} {:>7} {:>10.2} {:>10.6} {:>8.4} {:>8.2}",
            cfg.kind.to_string(),
            cfg.params_string(),
            s.asr.map_or("undef".into(), |v| format!("{v:.2}")),
            s.mean_psnr_db,
            s.mean_l1,
            s.mean_linf,
            s.total_wall_clock_s,
        );
    }
    Ok(())
}
