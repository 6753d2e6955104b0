//! Paired samples `(x_k, y_k)` stored as feature-by-sample matrices.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    Continuous,
    /// 0/1 features; the category of a sample is its bit string.
    Binary,
    /// One row per label; every column holds a single 1.
    OneHot { labels: Vec<String> },
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        !matches!(self, FeatureKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            source: source.into(),
            seed,
        }
    }
}

/// `n` paired samples; column `k` of `x` and `y` is sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub x_kind: FeatureKind,
    pub y_kind: FeatureKind,
    pub split: Option<Split>,
    pub provenance: Provenance,
}

impl PairedDataset {
    pub fn new(
        x: Matrix,
        y: Matrix,
        x_kind: FeatureKind,
        y_kind: FeatureKind,
        provenance: Provenance,
    ) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(contract(format!(
                "x has {} samples but y has {}",
                x.cols(),
                y.cols()
            )));
        }
        if x.cols() == 0 {
            return Err(Error::EmptyDataset);
        }
        check_kind(&x, &x_kind, "x")?;
        check_kind(&y, &y_kind, "y")?;
        Ok(Self {
            x,
            y,
            x_kind,
            y_kind,
            split: None,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.x.cols()
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        let n = self.n();
        if let Some(&bad) = split.train.iter().chain(&split.test).find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                what: "dataset",
                index: bad,
                len: n,
            });
        }
        if split.train.is_empty() {
            return Err(contract("split has an empty training set"));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// First `n_train` samples train, the rest test.
    pub fn with_leading_split(self, n_train: usize) -> Result<Self> {
        let n = self.n();
        let n_train = n_train.min(n);
        self.with_split(Split {
            train: (0..n_train).collect(),
            test: (n_train..n).collect(),
        })
    }

    /// Seeded random permutation, the first `⌈(1-test_fraction)·n⌉` train.
    pub fn with_random_split(self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(contract("test_fraction must lie in [0, 1)"));
        }
        let n = self.n();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * n as f64).floor() as usize;
        let test = idx.split_off(n - n_test);
        self.with_split(Split { train: idx, test })
    }

    /// Columns `idx` as a new dataset without a split.
    pub fn subset(&self, idx: &[usize]) -> PairedDataset {
        PairedDataset {
            x: self.x.select_columns(idx),
            y: self.y.select_columns(idx),
            x_kind: self.x_kind.clone(),
            y_kind: self.y_kind.clone(),
            split: None,
            provenance: self.provenance.clone(),
        }
    }

    pub fn train(&self) -> PairedDataset {
        match &self.split {
            Some(s) => self.subset(&s.train),
            None => self.subset(&(0..self.n()).collect::<Vec<_>>()),
        }
    }

    pub fn test(&self) -> Option<PairedDataset> {
        self.split
            .as_ref()
            .filter(|s| !s.test.is_empty())
            .map(|s| self.subset(&s.test))
    }

    /// Category label of every x sample.
    pub fn x_categories(&self) -> Result<Vec<String>> {
        categories(&self.x, &self.x_kind)
    }

    /// Category label of every y sample.
    pub fn y_categories(&self) -> Result<Vec<String>> {
        categories(&self.y, &self.y_kind)
    }
}

fn check_kind(m: &Matrix, kind: &FeatureKind, name: &str) -> Result<()> {
    match kind {
        FeatureKind::Continuous => Ok(()),
        FeatureKind::Binary => {
            if m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0) {
                Ok(())
            } else {
                Err(contract(format!("{name} is declared binary but has non 0/1 entries")))
            }
        }
        FeatureKind::OneHot { labels } => {
            if labels.len() != m.rows() {
                return Err(contract(format!(
                    "{name} has {} rows but {} one-hot labels",
                    m.rows(),
                    labels.len()
                )));
            }
            for k in 0..m.cols() {
                let col = m.column(k);
                let ones = col.iter().filter(|&&v| v == 1.0).count();
                let zeros = col.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != col.len() {
                    return Err(contract(format!("{name} column {k} is not one-hot")));
                }
            }
            Ok(())
        }
    }
}

fn categories(m: &Matrix, kind: &FeatureKind) -> Result<Vec<String>> {
    match kind {
        FeatureKind::Continuous => Err(Error::Unsupported(
            "continuous features have no categories".into(),
        )),
        FeatureKind::Binary => Ok((0..m.cols())
            .map(|k| {
                (0..m.rows())
                    .map(|i| if m[(i, k)] == 1.0 { '1' } else { '0' })
                    .collect()
            })
            .collect()),
        FeatureKind::OneHot { labels } => Ok((0..m.cols())
            .map(|k| {
                let i = (0..m.rows()).find(|&i| m[(i, k)] == 1.0).unwrap_or(0);
                labels[i].clone()
            })
            .collect()),
    }
}

/// One-hot encodes `values` with lexicographically sorted labels.
pub fn one_hot<S: AsRef<str>>(values: &[S]) -> (Matrix, Vec<String>) {
    let labels: Vec<String> = values
        .iter()
        .map(|v| v.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let m = one_hot_with_labels(values, &labels).expect("labels cover values");
    (m, labels)
}

/// One-hot encodes against a fixed label set.
pub fn one_hot_with_labels<S: AsRef<str>>(values: &[S], labels: &[String]) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), values.len());
    for (k, v) in values.iter().enumerate() {
        let i = labels
            .iter()
            .position(|l| l == v.as_ref())
            .ok_or_else(|| contract(format!("unknown label {:?}", v.as_ref())))?;
        m[(i, k)] = 1.0;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_round_trips() {
        let vals = ["red", "blue", "red", "green"];
        let (m, labels) = one_hot(&vals);
        assert_eq!(labels, ["blue", "green", "red"]);
        assert_eq!(m.shape(), (3, 4));
        let ds = PairedDataset::new(
            m.clone(),
            m,
            FeatureKind::OneHot { labels: labels.clone() },
            FeatureKind::OneHot { labels },
            Provenance::new("test", None),
        )
        .unwrap();
        assert_eq!(ds.x_categories().unwrap(), vals);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Matrix::zeros(1, 3);
        let y = Matrix::zeros(1, 2);
        assert!(PairedDataset::new(x, y, FeatureKind::Continuous, FeatureKind::Continuous, Provenance::new("t", None)).is_err());
        let bad = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 0.0]]);
        let kind = FeatureKind::OneHot { labels: vec!["a".into(), "b".into()] };
        assert!(PairedDataset::new(bad.clone(), bad, kind.clone(), kind, Provenance::new("t", None)).is_err());
    }

    #[test]
    fn binary_categories_are_bit_strings() {
        let x = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 1.0]]);
        let ds = PairedDataset::new(x.clone(), x, FeatureKind::Binary, FeatureKind::Binary, Provenance::new("t", None)).unwrap();
        assert_eq!(ds.x_categories().unwrap(), ["01", "11"]);
    }

    #[test]
    fn splits() {
        let x = Matrix::from_fn(1, 10, |_, j| j as f64);
        let ds = PairedDataset::new(x.clone(), x, FeatureKind::Continuous, FeatureKind::Continuous, Provenance::new("t", None)).unwrap();
        let s = ds.clone().with_random_split(0.3, 1).unwrap();
        let sp = s.split.clone().unwrap();
        assert_eq!(sp.train.len(), 7);
        assert_eq!(sp.test.len(), 3);
        let mut all: Vec<usize> = sp.train.iter().chain(&sp.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(s.test().unwrap().n(), 3);

        let l = ds.with_leading_split(8).unwrap();
        assert_eq!(l.train().x.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }
}
