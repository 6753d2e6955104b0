//! Density-ratio reconstitution `p(x,y) / (p(x) p(y)) = 1 + Σ_i σ_i f_i(x) g_i(y)`
//! and the likelihood classifier built on it.

use serde::{Deserialize, Serialize};

use crate::classical_ca::CaDecomposition;
use crate::error::{contract, Result};
use crate::linalg::Matrix;
use crate::neural::Mlp;
use crate::whitening::WhiteningTransform;

/// Scores never drop below `prior · RATIO_FLOOR`, even when a truncated
/// expansion gives a negative ratio.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Evaluates the x-side principal functions on feature columns.
#[derive(Debug, Clone, PartialEq)]
pub enum XFunctions {
    /// `d × |X|` values; inputs are one-hot columns over the x alphabet.
    Table(Matrix),
    /// Trained F-Net followed by its whitening map.
    Network {
        net: Mlp,
        a: Matrix,
        mean: Vec<f64>,
    },
}

impl XFunctions {
    pub fn d(&self) -> usize {
        match self {
            XFunctions::Table(t) => t.rows(),
            XFunctions::Network { a, .. } => a.rows(),
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            XFunctions::Table(t) => t.cols(),
            XFunctions::Network { net, .. } => net.config.input_width(),
        }
    }

    /// `d × n` principal-function values for `n` input columns.
    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.input_width() {
            return Err(contract(format!(
                "inputs have {} features, evaluator expects {}",
                x.rows(),
                self.input_width()
            )));
        }
        match self {
            XFunctions::Table(t) => Ok(t.matmul(x)),
            XFunctions::Network { net, a, mean } => {
                Ok(a.matmul(&net.predict(x)?.sub_row_offsets(mean)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstitutionModel {
    /// Weight of each component, normally the estimated correlations.
    pub pic_sqrt: Vec<f64>,
    pub f_eval: XFunctions,
    /// `d × |Y|` values of the y-side principal functions per class.
    pub g_table: Matrix,
    pub y_labels: Vec<String>,
    pub prior_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub index: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

impl ReconstitutionModel {
    pub fn new(
        pic_sqrt: Vec<f64>,
        f_eval: XFunctions,
        g_table: Matrix,
        y_labels: Vec<String>,
        prior_y: Vec<f64>,
    ) -> Result<Self> {
        let d = pic_sqrt.len();
        if f_eval.d() != d || g_table.rows() != d {
            return Err(contract(format!(
                "component count mismatch: {d} weights, f gives {}, g table has {}",
                f_eval.d(),
                g_table.rows()
            )));
        }
        if g_table.cols() != y_labels.len() || prior_y.len() != y_labels.len() {
            return Err(contract("g table, labels and prior disagree on the class count"));
        }
        if prior_y.iter().any(|&p| !(p >= 0.0)) || (prior_y.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(contract("class prior must be non-negative and sum to 1"));
        }
        Ok(Self {
            pic_sqrt,
            f_eval,
            g_table,
            y_labels,
            prior_y,
        })
    }

    /// Exact expansion of a classical CA truncated to its top `k` components.
    /// Inputs to the result are one-hot columns over the x labels.
    pub fn from_ca(ca: &CaDecomposition, k: usize) -> Result<Self> {
        let k = k.min(ca.dim());
        let cols: Vec<usize> = (0..k).collect();
        let f = ca.l_factors.select_columns(&cols).transpose();
        let g = ca.r_factors.select_columns(&cols).transpose();
        let prior = normalized(&ca.marginals_y);
        Self::new(
            ca.sigmas[..k].to_vec(),
            XFunctions::Table(f),
            g,
            ca.y_labels.clone(),
            prior,
        )
    }

    /// Model from trained encoders. `y_inputs` holds one representative
    /// G-Net input column per class, in label order.
    pub fn from_trained(
        f_net: &Mlp,
        g_net: &Mlp,
        whitening: &WhiteningTransform,
        pic_sqrt: Vec<f64>,
        y_inputs: &Matrix,
        y_labels: Vec<String>,
        prior_y: Vec<f64>,
    ) -> Result<Self> {
        let g_table = whitening.transform_g(&g_net.predict(y_inputs)?)?;
        let f_eval = XFunctions::Network {
            net: f_net.clone(),
            a: whitening.a.clone(),
            mean: whitening.mean_f.clone(),
        };
        Self::new(pic_sqrt, f_eval, g_table, y_labels, prior_y)
    }

    pub fn d(&self) -> usize {
        self.pic_sqrt.len()
    }

    pub fn n_classes(&self) -> usize {
        self.y_labels.len()
    }

    /// Raw (unfloored) ratio for one input column and class index.
    pub fn density_ratio(&self, x: &[f64], y: usize) -> Result<f64> {
        if y >= self.n_classes() {
            return Err(crate::Error::IndexOutOfRange {
                what: "class",
                index: y,
                len: self.n_classes(),
            });
        }
        let xm = Matrix::new(x.len(), 1, x.to_vec())?;
        Ok(self.density_ratios(&xm)?[(y, 0)])
    }

    /// `|Y| × n` ratios for `n` input columns.
    pub fn density_ratios(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.f_eval.eval(x)?;
        let mut weighted = f;
        for (i, &s) in self.pic_sqrt.iter().enumerate() {
            weighted.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.g_table.t_matmul(&weighted).map(|v| v + 1.0))
    }

    pub fn classify(&self, x: &[f64]) -> Result<Classification> {
        let xm = Matrix::new(x.len(), 1, x.to_vec())?;
        Ok(self.classify_batch(&xm)?.pop().expect("one column"))
    }

    pub fn classify_batch(&self, x: &Matrix) -> Result<Vec<Classification>> {
        let ratios = self.density_ratios(x)?;
        Ok((0..x.cols())
            .map(|k| {
                let scores: Vec<f64> = self
                    .prior_y
                    .iter()
                    .enumerate()
                    .map(|(y, &p)| p * ratios[(y, k)].max(RATIO_FLOOR))
                    .collect();
                let index = argmax_first(&scores);
                Classification {
                    index,
                    label: self.y_labels[index].clone(),
                    scores,
                }
            })
            .collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class frequencies of `observed` over `labels`, in label order.
pub fn prior_from_labels<S: AsRef<str>>(observed: &[S], labels: &[String]) -> Result<Vec<f64>> {
    if observed.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let mut counts = vec![0usize; labels.len()];
    for o in observed {
        let i = labels
            .iter()
            .position(|l| l == o.as_ref())
            .ok_or_else(|| contract(format!("label {:?} not in class list", o.as_ref())))?;
        counts[i] += 1;
    }
    let n = observed.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical_ca::{ca_decompose, contingency_from_pmf, q_matrix, JointPmf};
    use crate::linalg::svd;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rows: usize, cols: usize, seed: u64) -> JointPmf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.05..1.0));
        let total = raw.sum();
        JointPmf::from_matrix(raw.scale(1.0 / total)).unwrap()
    }

    fn one_hot(i: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    /// Reconstituted joint from the top-`k` expansion.
    fn reconstitute(p: &JointPmf, k: usize) -> Matrix {
        let ca = ca_decompose(&contingency_from_pmf(p).unwrap()).unwrap();
        let m = ReconstitutionModel::from_ca(&ca, k).unwrap();
        let (r, c) = p.probs().shape();
        let ratios = m.density_ratios(&Matrix::identity(r)).unwrap();
        Matrix::from_fn(r, c, |x, y| ratios[(y, x)] * ca.marginals_x[x] * ca.marginals_y[y])
    }

    /// `‖D_X^{-1/2}(P̂ − P)D_Y^{-1/2}‖_F`.
    fn weighted_error(p: &JointPmf, approx: &Matrix) -> f64 {
        let px = p.probs().row_sums();
        let py = p.probs().col_sums();
        let mut acc = 0.0;
        for x in 0..px.len() {
            for y in 0..py.len() {
                let e = approx[(x, y)] - p.probs()[(x, y)];
                acc += e * e / (px[x] * py[y]);
            }
        }
        acc.sqrt()
    }

    #[test]
    fn independent_model_has_unit_ratio() {
        let m = ReconstitutionModel::new(
            vec![0.0, 0.0],
            XFunctions::Table(Matrix::from_fn(2, 3, |i, j| (i + j) as f64)),
            Matrix::from_fn(2, 2, |i, j| (i * j) as f64 - 0.5),
            vec!["a".into(), "b".into()],
            vec![0.3, 0.7],
        )
        .unwrap();
        for x in 0..3 {
            for y in 0..2 {
                assert_eq!(m.density_ratio(&one_hot(x, 3), y).unwrap(), 1.0);
            }
        }
        let c = m.classify(&one_hot(1, 3)).unwrap();
        assert_eq!((c.index, c.label.as_str()), (1, "b"));
    }

    #[test]
    fn full_expansion_reproduces_pmf() {
        let p = random_pmf(3, 3, 9);
        let approx = reconstitute(&p, 2);
        assert!(approx.sub(p.probs()).max_abs() < 1e-8);
    }

    #[test]
    fn truncation_error_matches_svd_tail() {
        let p = random_pmf(3, 3, 4);
        let ca = ca_decompose(&contingency_from_pmf(&p).unwrap()).unwrap();
        let err = weighted_error(&p, &reconstitute(&p, 1));
        let tail: f64 = ca.sigmas[1..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((err - tail).abs() < 1e-10, "{err} vs {tail}");
        // Direct truncation of Q.
        let q = q_matrix(&contingency_from_pmf(&p).unwrap()).unwrap();
        let r = svd(&q).unwrap();
        let q1 = Matrix::from_fn(3, 3, |i, j| r.s[0] * r.u[(i, 0)] * r.vt[(0, j)]);
        assert!((err - q.sub(&q1).frobenius_norm()).abs() < 1e-10);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
        let m = ReconstitutionModel::new(
            vec![0.0],
            XFunctions::Table(Matrix::zeros(1, 2)),
            Matrix::zeros(1, 3),
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.25, 0.375, 0.375],
        )
        .unwrap();
        assert_eq!(m.classify(&one_hot(0, 2)).unwrap().index, 1);
    }

    #[test]
    fn negative_ratios_are_floored_only_in_scores() {
        let m = ReconstitutionModel::new(
            vec![2.0],
            XFunctions::Table(Matrix::from_rows(&[&[1.0]])),
            Matrix::from_rows(&[&[-1.0, 1.0]]),
            vec!["neg".into(), "pos".into()],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(m.density_ratio(&[1.0], 0).unwrap(), -1.0);
        let c = m.classify(&[1.0]).unwrap();
        assert_eq!(c.scores, vec![0.5 * RATIO_FLOOR, 1.5]);
        assert_eq!(c.label, "pos");
    }

    #[test]
    fn validation() {
        let bad_prior = ReconstitutionModel::new(
            vec![0.1],
            XFunctions::Table(Matrix::zeros(1, 2)),
            Matrix::zeros(1, 2),
            vec!["a".into(), "b".into()],
            vec![0.5, 0.6],
        );
        assert!(bad_prior.is_err());
        let bad_d = ReconstitutionModel::new(
            vec![0.1, 0.2],
            XFunctions::Table(Matrix::zeros(1, 2)),
            Matrix::zeros(1, 2),
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
        );
        assert!(bad_d.is_err());
    }

    #[test]
    fn priors_from_labels() {
        let labels = vec!["a".to_string(), "b".to_string()];
        assert_eq!(prior_from_labels(&["a", "b", "b", "b"], &labels).unwrap(), vec![0.25, 0.75]);
        assert!(prior_from_labels(&["c"], &labels).is_err());
    }

    #[test]
    fn exact_ca_classifier_is_bayes_optimal() {
        let p = random_pmf(5, 4, 12);
        let ca = ca_decompose(&contingency_from_pmf(&p).unwrap()).unwrap();
        let m = ReconstitutionModel::from_ca(&ca, ca.dim()).unwrap();
        for x in 0..5 {
            let c = m.classify(&one_hot(x, 5)).unwrap();
            assert_eq!(c.index, argmax_first(p.probs().row(x)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adding_components_never_hurts(seed in any::<u64>(), r in 2usize..7, c in 2usize..6) {
            let p = random_pmf(r, c, seed);
            let d = r.min(c) - 1;
            let mut prev = f64::INFINITY;
            for k in 0..=d {
                let e = weighted_error(&p, &reconstitute(&p, k));
                prop_assert!(e <= prev + 1e-12);
                prev = e;
            }
            prop_assert!(prev < 1e-8);
        }
    }
}
