use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DocScore, EvalReport, SignificanceResult};
use crate::rouge::{RougeScore, RougeTriple};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// One per-document CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub doc_id: String,
    pub r1_p: f64,
    pub r1_r: f64,
    pub r1_f: f64,
    pub r2_p: f64,
    pub r2_r: f64,
    pub r2_f: f64,
    pub rl_p: f64,
    pub rl_r: f64,
    pub rl_f: f64,
    pub seconds: f64,
}

impl From<&DocScore> for ScoreRow {
    fn from(d: &DocScore) -> Self {
        let RougeTriple { r1, r2, rl } = d.scores;
        Self {
            doc_id: d.doc_id.clone(),
            r1_p: r1.precision,
            r1_r: r1.recall,
            r1_f: r1.f1,
            r2_p: r2.precision,
            r2_r: r2.recall,
            r2_f: r2.f1,
            rl_p: rl.precision,
            rl_r: rl.recall,
            rl_f: rl.f1,
            seconds: d.seconds,
        }
    }
}

impl From<&ScoreRow> for DocScore {
    fn from(r: &ScoreRow) -> Self {
        let s = |precision, recall, f1| RougeScore { precision, recall, f1 };
        DocScore {
            doc_id: r.doc_id.clone(),
            scores: RougeTriple { r1: s(r.r1_p, r.r1_r, r.r1_f), r2: s(r.r2_p, r.r2_r, r.r2_f), rl: s(r.rl_p, r.rl_r, r.rl_f) },
            seconds: r.seconds,
        }
    }
}

pub fn write_scores_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for d in &report.docs {
        w.serialize(ScoreRow::from(d)).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>, ReportError> {
    let path = path.as_ref();
    let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<ScoreRow>, _>>().map_err(csv_err)
}

/// Model × ROUGE-1/2/L F1 × seconds per sample, with an optional
/// significance line per supplied comparison.
pub fn markdown_table(reports: &[EvalReport], significance: &[(String, SignificanceResult)]) -> String {
    let mut md = String::from("| Model | ROUGE-1 | ROUGE-2 | ROUGE-L | Time (s/sample) |\n|---|---|---|---|---|\n");
    for r in reports {
        let (r1, r2, rl) = r.mean_f1();
        let _ = writeln!(md, "| {} | {r1:.4} | {r2:.4} | {rl:.4} | {:.6} |", r.model_id, r.mean_seconds);
    }
    for (label, s) in significance {
        let _ = writeln!(
            md,
            "\n{label}: t = {:.3}, df = {}, p = {:.3e}, Cohen's d = {:.3}, n = {}",
            s.t, s.df, s.p_value, s.cohens_d, s.n
        );
    }
    md
}

/// Write `<model_id>_scores.csv` for every report plus `results.md` into `dir`.
pub fn summarize_report(
    reports: &[EvalReport],
    significance: &[(String, SignificanceResult)],
    dir: impl AsRef<Path>,
) -> Result<PathBuf, ReportError> {
    let dir = dir.as_ref();
    let io = |source| ReportError::Io { path: dir.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(io)?;
    for r in reports {
        write_scores_csv(r, dir.join(format!("{}_scores.csv", r.model_id)))?;
    }
    let md = dir.join("results.md");
    std::fs::write(&md, markdown_table(reports, significance)).map_err(|source| ReportError::Io { path: md.clone(), source })?;
    Ok(md)
}
