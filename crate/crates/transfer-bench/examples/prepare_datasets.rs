//! The three ingestion paths: synthetic generation, tabular CSV, and
//! domain-name lists, each ending in a binary dataset cache.
//!
//! ```bash
//! cargo run --release --example prepare_datasets
//! ```

use std::io::Write;

use transfer_bench::data::{
    generate_synthetic, ingest_domain_strings, ingest_tabular_csv, Dataset, IngestOptions, Split,
    SyntheticSpec,
};

fn show(name: &str, ds: &Dataset) {
    println!(
        "{name}: {} samples (train {} / val {} / test {}), fingerprint {}",
        ds.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Val).len(),
        ds.indices(Split::Test).len(),
        ds.fingerprint(),
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("transfer-bench-example");
    std::fs::create_dir_all(&dir)?;

    // 1. synthetic, the desk-scale stand-in
    let synth = generate_synthetic(&SyntheticSpec { n_per_class: 100, ..Default::default() })?;
    show("synthetic", &synth);
    let cache = dir.join("synthetic.spdz");
    synth.save_cache(&cache)?;
    let reloaded = Dataset::load_cache(&cache)?;
    assert_eq!(reloaded.fingerprint(), synth.fingerprint());
    println!("  cache roundtrip at {} OK", cache.display());

    // 2. tabular CSV: 115 numeric feature columns, a label column
    let csv_path = dir.join("flows.csv");
    let mut f = std::fs::File::create(&csv_path)?;
    let header: Vec<String> = (0..115).map(|i| format!("f{i}")).collect();
    writeln!(f, "{},label", header.join(","))?;
    for row in 0..40 {
        let cells: Vec<String> = (0..115).map(|c| format!("{}", (row * 7 + c) % 50)).collect();
        writeln!(f, "{},{}", cells.join(","), row % 2)?;
    }
    drop(f);
    let (tabular, report) = ingest_tabular_csv(&csv_path, "label", &IngestOptions::default())?;
    show("tabular", &tabular);
    for w in report.warnings() {
        println!("  warning: {w}");
    }

    // 3. domain-name lists
    let benign = dir.join("benign.txt");
    let malicious = dir.join("malicious.txt");
    std::fs::write(&benign, "example.com\nrust-lang.org\ndocs.rs\ncrates.io\n")?;
    std::fs::write(&malicious, "xj3k9q.biz\nqqzw7.info\nkld92x.net\npq0vv.org\n")?;
    let (domains, report) =
        ingest_domain_strings(&benign, &malicious, &IngestOptions { ratios: (0.5, 0.25, 0.25), seed: 3 })?;
    show("domains", &domains);
    for w in report.warnings() {
        println!("  warning: {w}");
    }
    Ok(())
}
