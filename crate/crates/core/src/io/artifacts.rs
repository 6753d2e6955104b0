//! Writing experiment outputs: atomic file writes, hashing and the small
//! CSV tables shared by the experiment runner and the CLI.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neural::EpochRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

fn ser(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row of the PIC report.
#[derive(Debug, Clone, PartialEq)]
pub struct PicRow {
    pub component: usize,
    pub train_raw: f64,
    pub train_clamped: f64,
    pub test_raw: Option<f64>,
    pub test_clamped: Option<f64>,
    pub reference: Option<f64>,
}

pub fn pics_csv(rows: &[PicRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "train_raw", "train", "test_raw", "test", "reference"])
        .map_err(ser)?;
    for r in rows {
        w.write_record([
            (r.component + 1).to_string(),
            r.train_raw.to_string(),
            r.train_clamped.to_string(),
            opt(r.test_raw),
            opt(r.test_clamped),
            opt(r.reference),
        ])
        .map_err(ser)?;
    }
    finish(w)
}

/// `label,c1..cd` with one row per column of `values` (`d × n`).
pub fn factors_csv(labels: &[String], values: &Matrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((1..=values.rows()).map(|i| format!("c{i}")));
    w.write_record(&header).map_err(ser)?;
    for (k, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend((0..values.rows()).map(|i| values[(i, k)].to_string()));
        w.write_record(&rec).map_err(ser)?;
    }
    finish(w)
}

pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "kyfan_term", "g_energy"]).map_err(ser)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.kyfan_term.to_string(),
            r.g_energy.to_string(),
        ])
        .map_err(ser)?;
    }
    finish(w)
}

/// `component,sigma,inertia,score_ratio` for a classical decomposition.
pub fn spectrum_csv(sigmas: &[f64], score_ratios: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "sigma", "inertia", "score_ratio"]).map_err(ser)?;
    for (i, (s, r)) in sigmas.iter().zip(score_ratios).enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string(), (s * s).to_string(), r.to_string()])
            .map_err(ser)?;
    }
    finish(w)
}

/// Samples as CSV, one column per feature row of `x` then `y`.
pub fn paired_csv(x_names: &[String], y_names: &[String], x: &Matrix, y: &Matrix) -> Result<String> {
    if x_names.len() != x.rows() || y_names.len() != y.rows() || x.cols() != y.cols() {
        return Err(crate::error::contract("feature names and sample matrices disagree"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(x_names.iter().chain(y_names)).map_err(ser)?;
    for k in 0..x.cols() {
        let rec = (0..x.rows()).map(|i| x[(i, k)]).chain((0..y.rows()).map(|i| y[(i, k)]));
        w.write_record(rec.map(|v| v.to_string())).map_err(ser)?;
    }
    finish(w)
}
