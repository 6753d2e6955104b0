//! CSV ingestion into [`PairedDataset`].

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{one_hot_with_labels, FeatureKind, PairedDataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    X,
    Y,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    #[default]
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    #[serde(default)]
    pub kind: ColumnKind,
}

/// Which columns feed which side. Columns not listed take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_role")]
    pub default_role: ColumnRole,
    #[serde(default)]
    pub default_kind: ColumnKind,
    /// Single-byte delimiter; detected from the header when absent.
    #[serde(default)]
    pub delimiter: Option<char>,
}

fn default_role() -> ColumnRole {
    ColumnRole::Ignore
}

impl CsvSchema {
    fn resolve(&self, header: &str) -> (ColumnRole, ColumnKind) {
        self.columns
            .iter()
            .find(|c| c.name == header)
            .map(|c| (c.role, c.kind))
            .unwrap_or((self.default_role, self.default_kind))
    }
}

/// Per-row affine map `(v - mean) / std` for continuous x features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Statistics of the columns `idx` of `m` (population variance).
    pub fn fit(m: &Matrix, idx: &[usize]) -> Self {
        let sub = m.select_columns(idx);
        let means = sub.row_means();
        let n = sub.cols().max(1) as f64;
        let stds = (0..sub.rows())
            .map(|i| {
                let var = sub.row(i).iter().map(|v| (v - means[i]).powi(2)).sum::<f64>() / n;
                // A constant column stays centred rather than exploding.
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, stds }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, k| (m[(i, k)] - self.means[i]) / self.stds[i])
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// A loaded CSV and what was learnt about its columns.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: PairedDataset,
    /// Feature names per x row; one-hot rows read `column=label`.
    pub x_features: Vec<String>,
    pub y_features: Vec<String>,
    /// Raw value of every categorical y column, one entry per sample,
    /// joined with `|` when there are several.
    pub y_raw: Vec<String>,
    pub x_raw_labels: Option<Vec<String>>,
}

struct SideColumns {
    continuous: Vec<(String, Vec<f64>)>,
    categorical: Vec<(String, Vec<String>)>,
}

impl SideColumns {
    fn new() -> Self {
        Self {
            continuous: Vec::new(),
            categorical: Vec::new(),
        }
    }

    fn is_empty(&self) -> bool {
        self.continuous.is_empty() && self.categorical.is_empty()
    }

    /// Continuous rows first, then one one-hot block per categorical column.
    fn assemble(self, n: usize) -> Result<(Matrix, FeatureKind, Vec<String>, Option<Vec<String>>)> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut names = Vec::new();
        for (name, vals) in &self.continuous {
            rows.push(vals.clone());
            names.push(name.clone());
        }
        let mut one_hot_labels = None;
        let mut raw = None;
        for (name, vals) in &self.categorical {
            let labels: Vec<String> = vals.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let block = one_hot_with_labels(vals, &labels)?;
            for i in 0..block.rows() {
                rows.push(block.row(i).to_vec());
                names.push(format!("{name}={}", labels[i]));
            }
            one_hot_labels = Some(labels);
            raw = Some(vals.clone());
        }
        let kind = if self.continuous.is_empty() && self.categorical.len() == 1 {
            FeatureKind::OneHot {
                labels: one_hot_labels.expect("one categorical column"),
            }
        } else {
            FeatureKind::Continuous
        };
        if !(self.continuous.is_empty() && self.categorical.len() == 1) {
            raw = None;
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Matrix::new(names.len(), n, data)?;
        Ok((m, kind, names, raw))
    }
}

fn detect_delimiter(header: &str) -> u8 {
    let semis = header.matches(';').count();
    let commas = header.matches(',').count();
    let tabs = header.matches('\t').count();
    if semis > commas && semis >= tabs {
        b';'
    } else if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Reads `path` according to `schema`. Continuous values are left raw; see
/// [`Standardizer`] for opt-in scaling.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    let text = std::fs::read_to_string(path)?;
    load_csv_str(&text, &path.display().to_string(), schema)
}

pub fn load_csv_str(text: &str, source: &str, schema: &CsvSchema) -> Result<LoadedCsv> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let first = text.lines().next().filter(|l| !l.trim().is_empty());
    let Some(first) = first else {
        return Err(parse_err(1, "file is empty".into()));
    };
    let delimiter = match schema.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => return Err(Error::Config(format!("delimiter {c:?} is not a single byte"))),
        None => detect_delimiter(first),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim_matches('"').to_string())
        .collect();
    for spec in &schema.columns {
        if !headers.contains(&spec.name) {
            return Err(parse_err(1, format!("missing column {:?}", spec.name)));
        }
    }
    let roles: Vec<(ColumnRole, ColumnKind)> = headers.iter().map(|h| schema.resolve(h)).collect();

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            if roles[col].1 == ColumnKind::Continuous && roles[col].0 != ColumnRole::Ignore {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    parse_err(line, format!("column {:?}: {field:?} is not a number", headers[col]))
                })?;
            }
            cells[col].push(field.to_string());
        }
    }
    let n = cells.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }

    let mut x_side = SideColumns::new();
    let mut y_side = SideColumns::new();
    for (col, (role, kind)) in roles.iter().enumerate() {
        let side = match role {
            ColumnRole::X => &mut x_side,
            ColumnRole::Y => &mut y_side,
            ColumnRole::Ignore => continue,
        };
        let name = headers[col].clone();
        let vals = std::mem::take(&mut cells[col]);
        match kind {
            ColumnKind::Continuous => side
                .continuous
                .push((name, vals.iter().map(|v| v.parse().expect("validated")).collect())),
            ColumnKind::Categorical => side.categorical.push((name, vals)),
        }
    }
    if x_side.is_empty() || y_side.is_empty() {
        return Err(Error::Config("schema must assign at least one column to each of x and y".into()));
    }
    let y_raw: Vec<String> = (0..n)
        .map(|k| {
            y_side
                .categorical
                .iter()
                .map(|(_, v)| v[k].as_str())
                .collect::<Vec<_>>()
                .join("|")
        })
        .collect();
    let (x, x_kind, x_features, x_raw_labels) = x_side.assemble(n)?;
    let (y, y_kind, y_features, _) = y_side.assemble(n)?;
    let dataset = PairedDataset::new(x, y, x_kind, y_kind, Provenance::new(format!("csv:{source}"), None))?;
    Ok(LoadedCsv {
        dataset,
        x_features,
        y_features,
        y_raw,
        x_raw_labels,
    })
}

/// Joint pmf file: header `x,<y labels...>`, then one row per x label.
pub fn load_pmf_csv(path: &Path) -> Result<crate::classical_ca::JointPmf> {
    let text = std::fs::read_to_string(path)?;
    let source = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.clone(),
        line,
        message,
    };
    let first = text.lines().next().ok_or_else(|| parse_err(1, "file is empty".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(first))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(parse_err(1, "need a label column and at least one y column".into()));
    }
    let y_labels = headers[1..].to_vec();
    let mut x_labels = Vec::new();
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        x_labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("{field:?} is not a probability")))?,
            );
        }
    }
    if x_labels.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let probs = Matrix::new(x_labels.len(), y_labels.len(), values)?;
    crate::classical_ca::JointPmf::new(probs, x_labels, y_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(cols: &[(&str, ColumnRole, ColumnKind)]) -> CsvSchema {
        CsvSchema {
            columns: cols
                .iter()
                .map(|(n, r, k)| ColumnSpec {
                    name: n.to_string(),
                    role: *r,
                    kind: *k,
                })
                .collect(),
            default_role: ColumnRole::Ignore,
            default_kind: ColumnKind::Continuous,
            delimiter: None,
        }
    }

    #[test]
    fn toy_categorical_pair() {
        let text = "colour,size,note\nred,S,a\nblue,L,b\nred,L,c\n";
        let s = schema(&[
            ("colour", ColumnRole::X, ColumnKind::Categorical),
            ("size", ColumnRole::Y, ColumnKind::Categorical),
        ]);
        let l = load_csv_str(text, "toy", &s).unwrap();
        assert_eq!(l.dataset.x.shape(), (2, 3));
        assert_eq!(l.dataset.y.shape(), (2, 3));
        assert_eq!(l.dataset.x_kind, FeatureKind::OneHot { labels: vec!["blue".into(), "red".into()] });
        assert_eq!(l.dataset.x_categories().unwrap(), ["red", "blue", "red"]);
        assert_eq!(l.x_features, ["colour=blue", "colour=red"]);
        assert_eq!(l.y_raw, ["S", "L", "L"]);
    }

    #[test]
    fn semicolon_files_and_defaults() {
        let text = "\"a\";\"b\";\"quality\"\n1.5;2;5\n-1;0.25;6\n3;4;5\n";
        let s = CsvSchema {
            columns: vec![ColumnSpec {
                name: "quality".into(),
                role: ColumnRole::Y,
                kind: ColumnKind::Categorical,
            }],
            default_role: ColumnRole::X,
            default_kind: ColumnKind::Continuous,
            delimiter: None,
        };
        let l = load_csv_str(text, "wine", &s).unwrap();
        assert_eq!(l.dataset.x.shape(), (2, 3));
        assert_eq!(l.dataset.x.row(1), &[2.0, 0.25, 4.0]);
        assert_eq!(l.dataset.y_kind, FeatureKind::OneHot { labels: vec!["5".into(), "6".into()] });
        assert_eq!(l.dataset.x_kind, FeatureKind::Continuous);
    }

    #[test]
    fn errors_name_the_line() {
        let s = schema(&[("a", ColumnRole::X, ColumnKind::Continuous), ("b", ColumnRole::Y, ColumnKind::Continuous)]);
        match load_csv_str("a,b\n1,2\n3\n", "f.csv", &s) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 2 fields"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match load_csv_str("a,b\n1,2\n3,x\n", "f.csv", &s) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("not a number"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_csv_str("", "f.csv", &s), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_csv_str("a,b\n", "f.csv", &s), Err(Error::Parse { .. })));
        let missing = schema(&[("zzz", ColumnRole::X, ColumnKind::Continuous)]);
        assert!(matches!(load_csv_str("a,b\n1,2\n", "f.csv", &missing), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn standardizer_uses_given_rows_only() {
        let m = Matrix::from_rows(&[&[1.0, 3.0, 100.0], &[5.0, 5.0, 5.0]]);
        let s = Standardizer::fit(&m, &[0, 1]);
        assert_eq!(s.means, vec![2.0, 5.0]);
        assert_eq!(s.stds, vec![1.0, 1.0]);
        let z = s.apply(&m);
        assert_eq!(z.row(0), &[-1.0, 1.0, 98.0]);
        assert_eq!(z.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(s.apply_vec(&[2.0, 6.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn pmf_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "x,u,v\na,0.25,0.25\nb,0.1,0.4\n").unwrap();
        let pmf = load_pmf_csv(&p).unwrap();
        assert_eq!(pmf.y_labels(), ["u", "v"]);
        assert_eq!(pmf.probs()[(1, 1)], 0.4);
        std::fs::write(&p, "x,u,v\na,0.25,zz\n").unwrap();
        assert!(matches!(load_pmf_csv(&p), Err(Error::Parse { line: 2, .. })));
    }
}
