//! Correspondence analysis of a two-way contingency table.
//!
//! Builds the normalised table `P`, the centred and marginal-scaled matrix
//! `Q = D_X^{-1/2} (P - p_X p_Yᵀ) D_Y^{-1/2}`, and reads orthogonal factors,
//! factor scores and score ratios off its SVD. On small finite alphabets this
//! is also the exact oracle for the principal inertia components.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{svd, Matrix};

/// Largest `|X|·|Y|` accepted by [`pics_exact`].
pub const MAX_EXACT_CELLS: usize = 1 << 20;

const PMF_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
        }
    }
}

/// Exact joint probability mass function over two finite alphabets.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    probs: Matrix,
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl JointPmf {
    /// Entries must be finite and non-negative; normalisation is checked
    /// later by [`contingency_from_pmf`].
    pub fn new(probs: Matrix, x_labels: Vec<String>, y_labels: Vec<String>) -> Result<Self> {
        if x_labels.len() != probs.rows() || y_labels.len() != probs.cols() {
            return Err(contract(format!(
                "pmf is {}x{} but has {} x-labels and {} y-labels",
                probs.rows(),
                probs.cols(),
                x_labels.len(),
                y_labels.len()
            )));
        }
        if probs.as_slice().iter().any(|&p| p < 0.0) {
            return Err(contract("pmf has negative entries"));
        }
        Ok(Self {
            probs,
            x_labels,
            y_labels,
        })
    }

    /// Uses `0..rows` and `0..cols` as labels.
    pub fn from_matrix(probs: Matrix) -> Result<Self> {
        let xl = (0..probs.rows()).map(|i| i.to_string()).collect();
        let yl = (0..probs.cols()).map(|j| j.to_string()).collect();
        Self::new(probs, xl, yl)
    }

    /// Independent pmf `p_X ⊗ p_Y`.
    pub fn product(px: &[f64], py: &[f64]) -> Result<Self> {
        Self::from_matrix(Matrix::from_fn(px.len(), py.len(), |i, j| px[i] * py[j]))
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCategory {
    pub axis: Axis,
    pub label: String,
}

/// Normalised co-occurrence table with strictly positive marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    table: Matrix,
    x_labels: Vec<String>,
    y_labels: Vec<String>,
    dropped: Vec<DroppedCategory>,
}

impl ContingencyTable {
    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    /// Categories removed at construction because their marginal was zero.
    pub fn dropped(&self) -> &[DroppedCategory] {
        &self.dropped
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.table.row_sums()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        self.table.col_sums()
    }

    /// Drops all-zero rows and columns, logging each one.
    fn from_parts(table: Matrix, x_labels: Vec<String>, y_labels: Vec<String>) -> Self {
        let px = table.row_sums();
        let py = table.col_sums();
        let keep_x: Vec<usize> = (0..px.len()).filter(|&i| px[i] > 0.0).collect();
        let keep_y: Vec<usize> = (0..py.len()).filter(|&j| py[j] > 0.0).collect();
        let mut dropped = Vec::new();
        for (i, l) in x_labels.iter().enumerate() {
            if px[i] <= 0.0 {
                log::warn!("dropping unobserved X category {l:?}");
                dropped.push(DroppedCategory {
                    axis: Axis::X,
                    label: l.clone(),
                });
            }
        }
        for (j, l) in y_labels.iter().enumerate() {
            if py[j] <= 0.0 {
                log::warn!("dropping unobserved Y category {l:?}");
                dropped.push(DroppedCategory {
                    axis: Axis::Y,
                    label: l.clone(),
                });
            }
        }
        if dropped.is_empty() {
            return Self {
                table,
                x_labels,
                y_labels,
                dropped,
            };
        }
        let trimmed = Matrix::from_fn(keep_x.len(), keep_y.len(), |i, j| {
            table[(keep_x[i], keep_y[j])]
        });
        Self {
            table: trimmed,
            x_labels: keep_x.iter().map(|&i| x_labels[i].clone()).collect(),
            y_labels: keep_y.iter().map(|&j| y_labels[j].clone()).collect(),
            dropped,
        }
    }
}

/// Counts co-occurrences; labels on both axes are sorted lexicographically.
pub fn contingency_from_samples<S: AsRef<str>, T: AsRef<str>>(
    xs: &[S],
    ys: &[T],
) -> Result<ContingencyTable> {
    contingency_from_samples_smoothed(xs, ys, 0.0)
}

/// As [`contingency_from_samples`], adding `alpha` pseudo-counts to every cell.
pub fn contingency_from_samples_smoothed<S: AsRef<str>, T: AsRef<str>>(
    xs: &[S],
    ys: &[T],
    alpha: f64,
) -> Result<ContingencyTable> {
    if xs.len() != ys.len() {
        return Err(contract(format!(
            "xs has {} samples but ys has {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(contract("smoothing must be finite and non-negative"));
    }
    let index = |vals: &mut dyn Iterator<Item = &str>| -> BTreeMap<String, usize> {
        let mut m: BTreeMap<String, usize> = vals.map(|v| (v.to_string(), 0)).collect();
        for (k, v) in m.values_mut().enumerate() {
            *v = k;
        }
        m
    };
    let xi = index(&mut xs.iter().map(|s| s.as_ref()));
    let yi = index(&mut ys.iter().map(|s| s.as_ref()));
    let mut counts = Matrix::from_fn(xi.len(), yi.len(), |_, _| alpha);
    for (x, y) in xs.iter().zip(ys) {
        counts[(xi[x.as_ref()], yi[y.as_ref()])] += 1.0;
    }
    let total = counts.sum();
    let table = counts.scale(1.0 / total);
    Ok(ContingencyTable::from_parts(
        table,
        xi.into_keys().collect(),
        yi.into_keys().collect(),
    ))
}

/// Wraps an exact pmf; its label order is kept.
pub fn contingency_from_pmf(p: &JointPmf) -> Result<ContingencyTable> {
    let total = p.probs.sum();
    if (total - 1.0).abs() > PMF_SUM_TOL {
        return Err(contract(format!("pmf sums to {total}, not 1")));
    }
    Ok(ContingencyTable::from_parts(
        p.probs.clone(),
        p.x_labels.clone(),
        p.y_labels.clone(),
    ))
}

/// `Q = D_X^{-1/2} (P - p_X p_Yᵀ) D_Y^{-1/2}`.
pub fn q_matrix(t: &ContingencyTable) -> Result<Matrix> {
    let px = t.marginal_x();
    let py = t.marginal_y();
    if let Some(i) = px.iter().position(|&p| p <= 0.0) {
        return Err(Error::DegenerateCategory {
            axis: Axis::X.name(),
            label: t.x_labels[i].clone(),
        });
    }
    if let Some(j) = py.iter().position(|&p| p <= 0.0) {
        return Err(Error::DegenerateCategory {
            axis: Axis::Y.name(),
            label: t.y_labels[j].clone(),
        });
    }
    let p = &t.table;
    Ok(Matrix::from_fn(p.rows(), p.cols(), |i, j| {
        (p[(i, j)] - px[i] * py[j]) / (px[i] * py[j]).sqrt()
    }))
}

/// Orthogonal factors, factor scores and score ratios of a contingency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaDecomposition {
    /// `|X| × d`, columns orthonormal under the `D_X`-weighted inner product.
    pub l_factors: Matrix,
    /// `|Y| × d`, columns orthonormal under the `D_Y`-weighted inner product.
    pub r_factors: Matrix,
    /// Singular values `σ_i` of `Q` (principal correlations), descending.
    pub sigmas: Vec<f64>,
    /// Factor scores `λ_i = σ_i²`, descending.
    pub scores: Vec<f64>,
    /// `λ_i / Σ λ_j`; all zero when the table is independent.
    pub score_ratios: Vec<f64>,
    pub marginals_x: Vec<f64>,
    pub marginals_y: Vec<f64>,
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
}

impl CaDecomposition {
    pub fn dim(&self) -> usize {
        self.sigmas.len()
    }

    /// `1 + Σ_{i<k} σ_i L[x,i] R[y,i]` using the leading `k` components.
    pub fn density_ratio(&self, x: usize, y: usize, k: usize) -> f64 {
        1.0 + (0..k.min(self.dim()))
            .map(|i| self.sigmas[i] * self.l_factors[(x, i)] * self.r_factors[(y, i)])
            .sum::<f64>()
    }
}

pub fn ca_decompose(t: &ContingencyTable) -> Result<CaDecomposition> {
    let q = q_matrix(t)?;
    let px = t.marginal_x();
    let py = t.marginal_y();
    let d = px.len().min(py.len()).saturating_sub(1);
    let r = svd(&q)?;
    let v = r.vt.transpose();
    let l_factors = Matrix::from_fn(px.len(), d, |i, k| r.u[(i, k)] / px[i].sqrt());
    let r_factors = Matrix::from_fn(py.len(), d, |j, k| v[(j, k)] / py[j].sqrt());
    let sigmas: Vec<f64> = r.s[..d].to_vec();
    let scores: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
    let total: f64 = scores.iter().sum();
    let score_ratios = if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![0.0; d]
    };
    Ok(CaDecomposition {
        l_factors,
        r_factors,
        sigmas,
        scores,
        score_ratios,
        marginals_x: px,
        marginals_y: py,
        x_labels: t.x_labels.clone(),
        y_labels: t.y_labels.clone(),
    })
}

/// Principal inertia spectrum of an exact pmf, reported both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct PicSpectrum {
    /// `σ_i = √λ_i`, the principal correlations.
    pub correlations: Vec<f64>,
    /// `λ_i`, the principal inertia components.
    pub inertias: Vec<f64>,
}

/// Ground-truth spectrum via `contingency_from_pmf → ca_decompose`.
pub fn pics_exact(p: &JointPmf) -> Result<PicSpectrum> {
    let cells = p.probs.rows() * p.probs.cols();
    if cells > MAX_EXACT_CELLS {
        return Err(Error::Capacity {
            cells,
            limit: MAX_EXACT_CELLS,
        });
    }
    let ca = ca_decompose(&contingency_from_pmf(p)?)?;
    Ok(PicSpectrum {
        correlations: ca.sigmas,
        inertias: ca.scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rows: usize, cols: usize, seed: u64) -> JointPmf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.05..1.0));
        let s = m.sum();
        JointPmf::from_matrix(m.scale(1.0 / s)).unwrap()
    }

    fn weighted_gram(f: &Matrix, w: &[f64]) -> Matrix {
        let mut fw = f.clone();
        for (i, &wi) in w.iter().enumerate() {
            fw.row_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        f.t_matmul(&fw)
    }

    #[test]
    fn counts_samples() {
        let t = contingency_from_samples(&["a", "a", "b"], &["0", "1", "1"]).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(t.table(), &Matrix::from_rows(&[&[third, third], &[0.0, third]]));
        assert_eq!(t.x_labels(), ["a", "b"]);

        let t = contingency_from_samples(&["1", "0", "0", "1"], &["1", "0", "0", "1"]).unwrap();
        assert_eq!(t.table(), &Matrix::from_diag(&[0.5, 0.5]));
    }

    #[test]
    fn labels_sorted_lexicographically() {
        let t = contingency_from_samples(&["b", "c", "a"], &["z", "y", "x"]).unwrap();
        assert_eq!(t.x_labels(), ["a", "b", "c"]);
        assert_eq!(t.y_labels(), ["x", "y", "z"]);
        assert_eq!(t.table()[(0, 0)], 1.0 / 3.0);
    }

    #[test]
    fn empty_and_mismatched_samples() {
        let e: [&str; 0] = [];
        assert!(matches!(contingency_from_samples(&e, &e), Err(Error::EmptyDataset)));
        assert!(contingency_from_samples(&["a"], &["b", "c"]).is_err());
    }

    #[test]
    fn independent_bits_fill_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<String> = (0..1000).map(|_| rng.random_range(0..2u8).to_string()).collect();
        let ys: Vec<String> = (0..1000).map(|_| rng.random_range(0..2u8).to_string()).collect();
        let t = contingency_from_samples(&xs, &ys).unwrap();
        for &p in t.table().as_slice() {
            assert!((p - 0.25).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn smoothing_adds_pseudo_counts() {
        let t = contingency_from_samples_smoothed(&["a", "b"], &["x", "y"], 1.0).unwrap();
        // counts [[2,1],[1,2]] / 6
        assert!((t.table()[(0, 0)] - 2.0 / 6.0).abs() < 1e-15);
        assert!((t.table()[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pmf_paths() {
        let u = JointPmf::from_matrix(Matrix::from_fn(2, 2, |_, _| 0.25)).unwrap();
        assert_eq!(contingency_from_pmf(&u).unwrap().table(), u.probs());

        let bsc = JointPmf::from_matrix(Matrix::from_rows(&[&[0.45, 0.05], &[0.05, 0.45]])).unwrap();
        let t = contingency_from_pmf(&bsc).unwrap();
        assert_eq!(t.table(), &Matrix::from_rows(&[&[0.45, 0.05], &[0.05, 0.45]]));

        let bad = JointPmf::from_matrix(Matrix::from_fn(2, 2, |_, _| 0.3)).unwrap();
        assert!(matches!(contingency_from_pmf(&bad), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn product_pmf_is_rank_one() {
        let p = JointPmf::product(&[0.2, 0.3, 0.5], &[0.6, 0.4]).unwrap();
        let t = contingency_from_pmf(&p).unwrap();
        let s = crate::linalg::svd(t.table()).unwrap().s;
        assert!(s[1] < 1e-15);
        let ca = ca_decompose(&t).unwrap();
        assert!(ca.scores.iter().all(|&l| l < 1e-24));
        assert_eq!(ca.score_ratios, vec![0.0]);
        assert!(q_matrix(&t).unwrap().max_abs() < 1e-16);
    }

    #[test]
    fn zero_marginals_are_dropped() {
        let m = Matrix::from_rows(&[&[0.5, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 0.5]]);
        let t = contingency_from_pmf(&JointPmf::from_matrix(m).unwrap()).unwrap();
        assert_eq!(t.table(), &Matrix::from_diag(&[0.5, 0.5]));
        assert_eq!(t.x_labels(), ["0", "2"]);
        assert_eq!(t.dropped().len(), 2);
        assert_eq!(t.dropped()[0], DroppedCategory { axis: Axis::X, label: "1".into() });
    }

    #[test]
    fn q_of_perfect_dependence() {
        let t = contingency_from_pmf(&JointPmf::from_matrix(Matrix::from_diag(&[0.5, 0.5])).unwrap()).unwrap();
        let q = q_matrix(&t).unwrap();
        let expect = Matrix::from_rows(&[&[0.5, -0.5], &[-0.5, 0.5]]);
        assert!(q.sub(&expect).max_abs() < 1e-15);
        let s = crate::linalg::svd(&q).unwrap().s;
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1].abs() < 1e-15);

        let ca = ca_decompose(&t).unwrap();
        assert!((ca.scores[0] - 1.0).abs() < 1e-14);
        assert_eq!(ca.score_ratios, vec![1.0]);
    }

    #[test]
    fn bsc_single_bit_correlation() {
        let bsc = JointPmf::from_matrix(Matrix::from_rows(&[&[0.45, 0.05], &[0.05, 0.45]])).unwrap();
        let s = pics_exact(&bsc).unwrap();
        assert!((s.correlations[0] - 0.8).abs() < 1e-14);
        assert!((s.inertias[0] - 0.64).abs() < 1e-14);
    }

    #[test]
    fn doubly_symmetric_two_by_two() {
        // p = [[1+ρ, 1-ρ], [1-ρ, 1+ρ]] / 4 has correlation ρ between the bits.
        for rho in [-0.7, -0.2, 0.0, 0.35, 0.9] {
            let p = Matrix::from_rows(&[
                &[(1.0 + rho) / 4.0, (1.0 - rho) / 4.0],
                &[(1.0 - rho) / 4.0, (1.0 + rho) / 4.0],
            ]);
            let s = pics_exact(&JointPmf::from_matrix(p).unwrap()).unwrap();
            assert!((s.correlations[0] - f64::abs(rho)).abs() < 1e-14);
        }
    }

    #[test]
    fn capacity_limit() {
        let p = JointPmf::from_matrix(Matrix::zeros(1025, 1025)).unwrap();
        assert!(matches!(pics_exact(&p), Err(Error::Capacity { .. })));
    }

    #[test]
    fn decomposition_invariants() {
        let p = random_pmf(7, 5, 3);
        let ca = ca_decompose(&contingency_from_pmf(&p).unwrap()).unwrap();
        assert_eq!(ca.dim(), 4);
        let ll = weighted_gram(&ca.l_factors, &ca.marginals_x);
        let rr = weighted_gram(&ca.r_factors, &ca.marginals_y);
        assert!(ll.sub(&Matrix::identity(4)).max_abs() < 1e-8);
        assert!(rr.sub(&Matrix::identity(4)).max_abs() < 1e-8);
        assert!(ca.scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(ca.scores.iter().all(|&l| (0.0..=1.0 + 1e-9).contains(&l)));
        assert!((ca.score_ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstitution_is_exact() {
        let p = random_pmf(4, 6, 8);
        let ca = ca_decompose(&contingency_from_pmf(&p).unwrap()).unwrap();
        for x in 0..4 {
            for y in 0..6 {
                let ratio = p.probs()[(x, y)] / (ca.marginals_x[x] * ca.marginals_y[y]);
                assert!((ratio - ca.density_ratio(x, y, ca.dim())).abs() < 1e-8);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn merging_x_categories_never_increases_correlations(seed in any::<u64>(), a in 0usize..5, b in 0usize..5) {
                prop_assume!(a != b);
                let p = random_pmf(5, 4, seed);
                let before = pics_exact(&p).unwrap().correlations;
                let (lo, hi) = (a.min(b), a.max(b));
                let mut rows: Vec<Vec<f64>> = (0..5).map(|i| p.probs().row(i).to_vec()).collect();
                let merged = rows.remove(hi);
                rows[lo].iter_mut().zip(&merged).for_each(|(x, y)| *x += y);
                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                let after = pics_exact(&JointPmf::from_matrix(Matrix::from_rows(&refs)).unwrap()).unwrap().correlations;
                for (i, s) in after.iter().enumerate() {
                    prop_assert!(*s <= before[i] + 1e-10, "component {i}: {s} > {}", before[i]);
                }
            }

            #[test]
            fn permuting_categories_permutes_factor_rows(seed in any::<u64>(), shift in 1usize..5) {
                let p = random_pmf(5, 4, seed);
                let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
                let permuted = Matrix::from_fn(5, 4, |i, j| p.probs()[(perm[i], j)]);
                let a = ca_decompose(&contingency_from_pmf(&p).unwrap()).unwrap();
                let b = ca_decompose(&contingency_from_pmf(&JointPmf::from_matrix(permuted).unwrap()).unwrap()).unwrap();
                for k in 0..a.dim() {
                    prop_assert!((a.sigmas[k] - b.sigmas[k]).abs() < 1e-10);
                    for i in 0..5 {
                        prop_assert!((b.l_factors[(i, k)] - a.l_factors[(perm[i], k)]).abs() < 1e-8);
                    }
                }
            }
        }
    }
}
