//! Train a SPRITZ1 classifier on synthetic data, checkpoint it, and verify
//! the roundtrip reproduces bit-identical predictions.
//!
//! ```bash
//! cargo run --release --example train_classifier
//! ```

use transfer_bench::data::{generate_synthetic, Split, SyntheticSpec};
use transfer_bench::model::{
    batch_tensor, build_spritz1, load_checkpoint, train, TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(&SyntheticSpec { n_per_class: 150, ..Default::default() })?;
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    println!("training spritz1 on {} samples ...", dataset.indices(Split::Train).len());
    let (model, report) = train(&build_spritz1(), &dataset, &cfg)?;
    for (i, e) in report.per_epoch.iter().enumerate() {
        println!("epoch {}: loss {:.4}, val accuracy {:.4}", i + 1, e.mean_loss, e.val_accuracy);
    }
    println!(
        "final test accuracy {:.4} in {:.1}s ({} parameters)",
        report.final_test_accuracy,
        report.wall_clock_s,
        model.param_count()
    );

    let dir = std::env::temp_dir().join("transfer-bench-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("spritz1.sptz");
    transfer_bench::model::save_checkpoint(
        &model,
        &cfg,
        dataset.fingerprint(),
        report.final_test_accuracy,
        &path,
    )?;
    let loaded = load_checkpoint(&path)?;

    let probe: Vec<&transfer_bench::data::PatchSample> =
        dataset.split_samples(Split::Test).take(8).collect();
    let batch = batch_tensor(&probe)?;
    let a = model.predict(&batch)?;
    let b = loaded.model.predict(&batch)?;
    let identical = a
        .logits
        .iter()
        .zip(&b.logits)
        .all(|(x, y)| x[0].to_bits() == y[0].to_bits() && x[1].to_bits() == y[1].to_bits());
    println!("checkpoint roundtrip bit-identical: {identical}");
    Ok(())
}
