//! Domain-name ingestion: one name per line, lowercase-folded, each byte
//! mapped to `value / 255`, written row-major, truncated at 4096 cells and
//! zero-padded.

use std::collections::HashMap;
use std::path::Path;

use super::tabular::IngestOptions;
use super::{Dataset, IngestReport, PatchSample, Provenance, PATCH_CELLS, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn encode_domain(name: &str) -> Vec<f32> {
    let mut out = vec![0.0f32; PATCH_CELLS];
    for (i, b) in name.bytes().take(PATCH_CELLS).enumerate() {
        out[i] = b as f32 / 255.0;
    }
    out
}

fn read_domains(path: &Path, report: &mut IngestReport) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingest { path: path.to_path_buf(), line: 0, detail: e.to_string() })?;
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            report.skipped_empty_lines += 1;
            continue;
        }
        out.push(trimmed.to_lowercase());
    }
    if out.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            line: 0,
            detail: "file contains no domain names".into(),
        });
    }
    Ok(out)
}

pub fn ingest_domain_strings(
    path_benign: &Path,
    path_malicious: &Path,
    options: &IngestOptions,
) -> Result<(Dataset, IngestReport)> {
    let mut report = IngestReport::default();
    let benign = read_domains(path_benign, &mut report)?;
    let malicious = read_domains(path_malicious, &mut report)?;

    let mut first_label: HashMap<&str, u8> = HashMap::new();
    for d in &benign {
        first_label.entry(d).or_insert(0);
    }
    for d in &malicious {
        if first_label.get(d.as_str()) == Some(&0) {
            report.label_conflicts.push(d.clone());
        }
    }
    report.label_conflicts.sort();
    report.label_conflicts.dedup();

    let mut samples = Vec::with_capacity(benign.len() + malicious.len());
    for (label, list) in [(0u8, &benign), (1u8, &malicious)] {
        for (i, d) in list.iter().enumerate() {
            samples.push(PatchSample::new(
                Tensor::new([1, PATCH_SIDE, PATCH_SIDE], encode_domain(d))?,
                label,
                format!("{}:{}", if label == 0 { "benign" } else { "malicious" }, i + 1),
            )?);
        }
    }
    let ds = Dataset::with_split(samples, Provenance::DomainStrings, options.ratios, options.seed)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    #[test]
    fn aa_maps_to_97_over_255() {
        let enc = encode_domain("aa");
        assert!((enc[0] - 97.0 / 255.0).abs() < 1e-7);
        assert!((enc[1] - 97.0 / 255.0).abs() < 1e-7);
        assert!(enc[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_line_truncates_at_4096() {
        let long = "x".repeat(5000);
        let enc = encode_domain(&long);
        assert_eq!(enc.len(), PATCH_CELLS);
        assert!(enc.iter().all(|&v| v == b'x' as f32 / 255.0));
    }

    #[test]
    fn uppercase_is_folded() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_lines(dir.path(), "b.txt", &["EXAMPLE.com", "a.org", "b.org", "c.org"]);
        let m = write_lines(dir.path(), "m.txt", &["evil.net", "bad.net", "worse.net", "x.net"]);
        let (ds, _) = ingest_domain_strings(
            &b,
            &m,
            &IngestOptions { ratios: (1.0, 0.0, 0.0), seed: 1 },
        )
        .unwrap();
        let s = &ds.samples()[0];
        assert!((s.patch.data()[0] - b'e' as f32 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn empty_lines_counted_and_conflicts_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_lines(dir.path(), "b.txt", &["good.com", "", "shared.com", "x.com"]);
        let m = write_lines(dir.path(), "m.txt", &["SHARED.com", "evil.com", "", "y.com"]);
        let (_, report) = ingest_domain_strings(
            &b,
            &m,
            &IngestOptions { ratios: (1.0, 0.0, 0.0), seed: 1 },
        )
        .unwrap();
        assert_eq!(report.skipped_empty_lines, 2);
        assert_eq!(report.label_conflicts, vec!["shared.com".to_string()]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_lines(dir.path(), "b.txt", &["", ""]);
        let m = write_lines(dir.path(), "m.txt", &["evil.com"]);
        assert!(matches!(
            ingest_domain_strings(&b, &m, &IngestOptions::default()),
            Err(Error::Ingest { .. })
        ));
    }
}
