//! CSV ingestion: one row of numeric features becomes one patch. Features are
//! min-max normalized per column (statistics from the train split only, so the
//! val/test splits never leak into the scaling), written row-major and tiled
//! in full repeats across the 4096 cells, remainder zero-padded.

use std::path::Path;

use super::{Dataset, IngestReport, PatchSample, Provenance, PATCH_CELLS, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { ratios: (0.6, 0.2, 0.2), seed: 7 }
    }
}

fn parse_label(raw: &str, path: &Path, line: usize) -> Result<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "benign" => Ok(0),
        "1" | "malicious" => Ok(1),
        other => Err(Error::Ingest {
            path: path.to_path_buf(),
            line,
            detail: format!("label `{other}` is not 0/1/benign/malicious"),
        }),
    }
}

pub fn ingest_tabular_csv(
    path: &Path,
    label_column: &str,
    options: &IngestOptions,
) -> Result<(Dataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingest { path: path.to_path_buf(), line: 0, detail: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest { path: path.to_path_buf(), line: 1, detail: e.to_string() })?
        .clone();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| Error::Ingest {
        path: path.to_path_buf(),
        line: 1,
        detail: format!("label column `{label_column}` not in header"),
    })?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.to_string()).collect();
    if feature_names.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            line: 1,
            detail: "no feature columns besides the label".into(),
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record =
            record.map_err(|e| Error::Ingest { path: path.to_path_buf(), line, detail: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                line,
                detail: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        let mut feats = Vec::with_capacity(feature_names.len());
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                labels.push(parse_label(cell, path, line)?);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Ingest {
                    path: path.to_path_buf(),
                    line,
                    detail: format!("non-numeric cell `{cell}` in column `{}`", headers.get(col).unwrap_or("?")),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingest {
                        path: path.to_path_buf(),
                        line,
                        detail: format!("non-finite value in column `{}`", headers.get(col).unwrap_or("?")),
                    });
                }
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Ingest { path: path.to_path_buf(), line: 1, detail: "no data rows".into() });
    }

    // Splits are decided on raw rows so the normalization statistics can be
    // restricted to the train split.
    let proto: Vec<PatchSample> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            PatchSample::new(Tensor::zeros([1, PATCH_SIDE, PATCH_SIDE]), l, format!("row-{}", i + 2))
        })
        .collect::<Result<_>>()?;
    let (train_idx, val_idx, test_idx) =
        super::stratified_split(&proto, options.ratios, options.seed)?;

    let nf = feature_names.len();
    let mut mins = vec![f64::INFINITY; nf];
    let mut maxs = vec![f64::NEG_INFINITY; nf];
    for &i in &train_idx {
        for (j, &v) in rows[i as usize].iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let mut report = IngestReport::default();
    for (j, name) in feature_names.iter().enumerate() {
        if mins[j] == maxs[j] {
            report.constant_columns.push(name.clone());
        }
    }

    let samples: Vec<PatchSample> = rows
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (feats, &label))| {
            let normalized: Vec<f32> = feats
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    if mins[j] == maxs[j] {
                        0.5
                    } else {
                        (((v - mins[j]) / (maxs[j] - mins[j])).clamp(0.0, 1.0)) as f32
                    }
                })
                .collect();
            let patch = tile_features(&normalized);
            PatchSample::new(
                Tensor::new([1, PATCH_SIDE, PATCH_SIDE], patch)?,
                label,
                format!("row-{}", i + 2),
            )
        })
        .collect::<Result<_>>()?;

    let ds = Dataset::from_parts(samples, train_idx, val_idx, test_idx, Provenance::TabularCsv);
    Ok((ds, report))
}

/// Full cyclic repeats of the feature vector; remaining cells stay zero.
/// A feature vector longer than the patch is truncated at 4096.
fn tile_features(features: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; PATCH_CELLS];
    let f = features.len().min(PATCH_CELLS);
    if f == 0 {
        return out;
    }
    let repeats = PATCH_CELLS / f;
    for r in 0..repeats {
        out[r * f..(r + 1) * f].copy_from_slice(&features[..f]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn csv_with_rows(n_per_class: usize, nf: usize) -> String {
        let mut s = String::new();
        for j in 0..nf {
            s.push_str(&format!("f{j},"));
        }
        s.push_str("label\n");
        for i in 0..2 * n_per_class {
            for j in 0..nf {
                s.push_str(&format!("{},", (i * 7 + j * 3) % 23));
            }
            s.push_str(&format!("{}\n", i % 2));
        }
        s
    }

    #[test]
    fn tiling_115_features_fills_full_repeats_only() {
        let feats = vec![1.0f32; 115];
        let patch = tile_features(&feats);
        let repeats = PATCH_CELLS / 115; // 35
        assert_eq!(repeats, 35);
        assert!(patch[..repeats * 115].iter().all(|&v| v == 1.0));
        assert!(patch[repeats * 115..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exactly_4096_features_fill_without_tiling() {
        let feats: Vec<f32> = (0..4096).map(|i| (i % 10) as f32 / 10.0).collect();
        let patch = tile_features(&feats);
        assert_eq!(patch, feats);
    }

    #[test]
    fn max_valued_train_row_maps_to_ones() {
        let dir = tempfile::tempdir().unwrap();
        // 4 rows per class, constant split seed; every feature spans 0..9
        let mut content = String::from("a,b,label\n");
        for i in 0..8 {
            let v = if i < 2 { 9 } else { i % 9 };
            content.push_str(&format!("{v},{v},{}\n", i % 2));
        }
        let p = write_csv(dir.path(), "t.csv", &content);
        let (ds, _) =
            ingest_tabular_csv(&p, "label", &IngestOptions { ratios: (1.0, 0.0, 0.0), seed: 1 })
                .unwrap();
        // rows 0 and 1 hold the maxima; their occupied cells must be exactly 1.0
        let s = &ds.samples()[0];
        let occupied = (PATCH_CELLS / 2) * 2;
        assert!(s.patch.data()[..occupied].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_rows_produce_identical_patches() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", "a,b,label\n1,2,0\n1,2,0\n3,4,1\n3,4,1\n");
        let (ds, _) =
            ingest_tabular_csv(&p, "label", &IngestOptions { ratios: (1.0, 0.0, 0.0), seed: 1 })
                .unwrap();
        assert_eq!(ds.samples()[0].patch.data(), ds.samples()[1].patch.data());
    }

    #[test]
    fn non_numeric_cell_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", "a,label\n1,0\nfoo,1\n");
        let err = ingest_tabular_csv(&p, "label", &IngestOptions::default()).unwrap_err();
        match err {
            Error::Ingest { line, detail, .. } => {
                assert_eq!(line, 3);
                assert!(detail.contains("`a`"), "{detail}");
            }
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn constant_column_reported_and_mapped_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", "a,b,label\n5,1,0\n5,2,0\n5,3,1\n5,4,1\n");
        let (ds, report) =
            ingest_tabular_csv(&p, "label", &IngestOptions { ratios: (1.0, 0.0, 0.0), seed: 1 })
                .unwrap();
        assert_eq!(report.constant_columns, vec!["a".to_string()]);
        for s in ds.samples() {
            assert_eq!(s.patch.data()[0], 0.5);
        }
    }

    #[test]
    fn missing_label_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", "a,b\n1,2\n");
        let err = ingest_tabular_csv(&p, "label", &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ingest { line: 1, .. }));
    }

    #[test]
    fn ingestion_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", &csv_with_rows(20, 6));
        let opts = IngestOptions::default();
        let (a, _) = ingest_tabular_csv(&p, "label", &opts).unwrap();
        let (b, _) = ingest_tabular_csv(&p, "label", &opts).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
