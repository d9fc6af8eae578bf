//! Summary matrix rendering: CSV plus a Markdown mirror with the
//! transferable rows in bold.

use super::ScenarioReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, serde::Serialize)]
pub struct MatrixRow {
    pub scenario: String,
    pub sn: String,
    pub tn: String,
    pub attack: String,
    pub params: String,
    pub asr_sn: String,
    pub asr_tn: String,
    pub psnr: String,
    pub l1: String,
    pub linf: String,
    pub transferable: String,
    pub seconds: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "undefined".into(),
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl MatrixRow {
    pub fn from_report(r: &ScenarioReport) -> Self {
        MatrixRow {
            scenario: r.case.scenario.to_string(),
            sn: r.case.sn.key(),
            tn: r.case.tn.key(),
            attack: r.case.attack.kind.to_string(),
            params: r.case.attack.params_string(),
            asr_sn: fmt_opt(r.metrics.asr_sn),
            asr_tn: fmt_opt(r.metrics.asr_tn),
            psnr: fmt_f(r.metrics.mean_psnr_db),
            l1: format!("{:.6}", r.metrics.mean_l1),
            linf: fmt_f(r.metrics.mean_linf),
            transferable: match r.metrics.transferable {
                Some(true) => "yes".into(),
                Some(false) => "no".into(),
                None => "undefined".into(),
            },
            seconds: format!("{:.2}", r.attack_wall_clock_s),
        }
    }

    fn cells(&self) -> [&str; 12] {
        [
            &self.scenario,
            &self.sn,
            &self.tn,
            &self.attack,
            &self.params,
            &self.asr_sn,
            &self.asr_tn,
            &self.psnr,
            &self.l1,
            &self.linf,
            &self.transferable,
            &self.seconds,
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteMatrix {
    pub rows: Vec<MatrixRow>,
}

const HEADER: [&str; 12] = [
    "scenario",
    "sn",
    "tn",
    "attack",
    "params",
    "asr_sn",
    "asr_tn",
    "psnr",
    "l1",
    "linf",
    "transferable",
    "seconds",
];

pub fn render_csv(matrix: &SuiteMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).map_err(|e| Error::Config(format!("csv: {e}")))?;
    for row in &matrix.rows {
        w.write_record(row.cells()).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Markdown table; rows whose target-network ASR crossed the 50% threshold
/// are rendered fully bold.
pub fn render_markdown(matrix: &SuiteMatrix) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", HEADER.join(" | ")));
    out.push_str(&format!("|{}\n", " --- |".repeat(HEADER.len())));
    for row in &matrix.rows {
        let bold = row.transferable == "yes";
        let cells: Vec<String> = row
            .cells()
            .iter()
            .map(|c| if bold { format!("**{c}**") } else { (*c).to_string() })
            .collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(transferable: &str, asr_tn: &str) -> MatrixRow {
        MatrixRow {
            scenario: "cross-model".into(),
            sn: "spritz1@a".into(),
            tn: "spritz2@a".into(),
            attack: "jsma".into(),
            params: "theta=0.1,budget=0.1".into(),
            asr_sn: "0.9800".into(),
            asr_tn: asr_tn.into(),
            psnr: "41.0000".into(),
            l1: "0.000500".into(),
            linf: "0.1000".into(),
            transferable: transferable.into(),
            seconds: "12.00".into(),
        }
    }

    #[test]
    fn empty_matrix_renders_header_only() {
        let m = SuiteMatrix::default();
        let csv = render_csv(&m).unwrap();
        assert_eq!(csv.lines().count(), 1);
        let md = render_markdown(&m);
        assert_eq!(md.lines().count(), 2);
    }

    #[test]
    fn markdown_bolds_exactly_the_transferable_rows() {
        let m = SuiteMatrix { rows: vec![row("yes", "0.9960"), row("no", "0.0100")] };
        let md = render_markdown(&m);
        let lines: Vec<&str> = md.lines().collect();
        assert!(lines[2].contains("**0.9960**"));
        assert!(!lines[3].contains("**"));
    }

    #[test]
    fn csv_row_count_matches() {
        let m = SuiteMatrix { rows: vec![row("yes", "0.9"), row("no", "0.1"), row("no", "0.2")] };
        let csv = render_csv(&m).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().next().unwrap().starts_with("scenario,sn,tn,attack"));
    }
}
