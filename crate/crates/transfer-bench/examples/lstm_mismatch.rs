//! The architecture-mismatch defense: craft on a CNN source network, then
//! compare how the examples fare against a CNN target versus an LSTM target
//! trained on the same data.
//!
//! ```bash
//! cargo run --release --example lstm_mismatch
//! ```

use transfer_bench::attack::AttackConfig;
use transfer_bench::data::{generate_synthetic, SyntheticSpec};
use transfer_bench::defense::arch_mismatch_eval;
use transfer_bench::model::{build_lstm, build_spritz1, build_spritz2, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(&SyntheticSpec { n_per_class: 120, ..Default::default() })?;
    let cnn_cfg = TrainConfig { epochs: 2, ..Default::default() };
    let lstm_cfg = TrainConfig { epochs: 4, ..Default::default() };

    println!("training spritz1 (source), spritz2 (CNN target), lstm (mismatch target) ...");
    let (sn, _) = train(&build_spritz1(), &dataset, &cnn_cfg)?;
    let (cnn_tn, r2) = train(&build_spritz2(), &dataset, &cnn_cfg)?;
    let (lstm_tn, rl) = train(&build_lstm(), &dataset, &lstm_cfg)?;
    println!("  cnn target accuracy {:.4}, lstm target accuracy {:.4}", r2.final_test_accuracy, rl.final_test_accuracy);

    let attack = AttackConfig::ifgsm(0.1, 10);
    let report = arch_mismatch_eval(&sn, &cnn_tn, &lstm_tn, &dataset, &attack, 7)?;
    let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!("ASR on the CNN target:  {}", f(report.pre_asr_tn));
    println!("ASR on the LSTM target: {}", f(report.post_asr_tn));
    Ok(())
}
