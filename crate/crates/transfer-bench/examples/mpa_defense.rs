//! Defend a target network by fine-tuning it on examples from an attack
//! that transfers, then compare its ASR before and after on the same
//! adversarial set.
//!
//! ```bash
//! cargo run --release --example mpa_defense
//! ```

use transfer_bench::attack::AttackConfig;
use transfer_bench::data::{generate_synthetic, SyntheticSpec};
use transfer_bench::defense::{mpa_finetune, DefenseConfig};
use transfer_bench::model::{build_spritz1, build_spritz2, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(&SyntheticSpec { n_per_class: 120, ..Default::default() })?;
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    println!("training source (spritz1) and target (spritz2) on the same data ...");
    let (sn, _) = train(&build_spritz1(), &dataset, &cfg)?;
    let (tn, _) = train(&build_spritz2(), &dataset, &cfg)?;

    let defense = DefenseConfig {
        finetune_epochs: 3,
        ..DefenseConfig::mpa_finetune(vec![AttackConfig::ifgsm(0.1, 10)])
    };
    println!("fine-tuning the target on adversarial examples crafted on the source ...");
    let (_defended, report) = mpa_finetune(&tn, &sn, &dataset, &defense)?;

    let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!("target-network ASR before fine-tuning: {}", f(report.pre_asr_tn));
    println!("target-network ASR after fine-tuning:  {}", f(report.post_asr_tn));
    println!(
        "clean test accuracy: {:.4} -> {:.4}",
        report.tn_accuracy_before, report.tn_accuracy_after
    );
    Ok(())
}
