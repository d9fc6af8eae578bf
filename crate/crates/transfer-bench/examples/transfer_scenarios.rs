//! A miniature transferability study: two architectures, two synthetic
//! datasets, the three mismatch scenarios, one attack each.
//!
//! ```bash
//! cargo run --release --example transfer_scenarios
//! ```

use transfer_bench::attack::AttackConfig;
use transfer_bench::data::{generate_synthetic, SyntheticSpec};
use transfer_bench::harness::{
    render_markdown, run_suite, HarnessOptions, ModelRegistry, NetRef, Scenario, ScenarioCase,
};
use transfer_bench::model::{train, Arch, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = generate_synthetic(&SyntheticSpec { n_per_class: 120, ..Default::default() })?;
    let b = generate_synthetic(&SyntheticSpec {
        n_per_class: 120,
        seed: 8,
        variant: 1,
        ..Default::default()
    })?;

    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let mut registry = ModelRegistry::new();
    registry.insert_dataset("A", a.clone());
    registry.insert_dataset("B", b.clone());
    for (arch, ds, name) in [
        (Arch::Spritz1, &a, "A"),
        (Arch::Spritz2, &a, "A"),
        (Arch::Spritz1, &b, "B"),
        (Arch::Spritz2, &b, "B"),
    ] {
        println!("training {arch} on {name} ...");
        let (model, report) = train(&arch.spec(), ds, &cfg)?;
        println!("  test accuracy {:.4}", report.final_test_accuracy);
        registry.insert_model(&NetRef::new(arch, name), model, format!("{arch}@{name}"));
    }

    let attack = AttackConfig::ifgsm(0.1, 10);
    let mut cases = vec![
        ScenarioCase::new(
            Scenario::CrossTraining,
            NetRef::new(Arch::Spritz1, "A"),
            NetRef::new(Arch::Spritz1, "B"),
            attack.clone(),
        ),
        ScenarioCase::new(
            Scenario::CrossModel,
            NetRef::new(Arch::Spritz1, "A"),
            NetRef::new(Arch::Spritz2, "A"),
            attack.clone(),
        ),
        ScenarioCase::new(
            Scenario::CrossModelAndTraining,
            NetRef::new(Arch::Spritz1, "A"),
            NetRef::new(Arch::Spritz2, "B"),
            attack,
        ),
    ];
    for case in &mut cases {
        case.sample_count = 24;
    }

    let outcome = run_suite(&cases, &registry, &HarnessOptions::default(), None)?;
    println!("\n{}", render_markdown(&outcome.matrix));
    Ok(())
}
