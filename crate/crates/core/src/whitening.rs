//! Turns raw encoder outputs into principal functions.
//!
//! Both outputs are centred and whitened with the inverse square roots of
//! their covariances, then rotated by the singular vectors of the whitened
//! cross-covariance so that `(1/n) F Gᵀ` becomes diagonal. The diagonal is
//! the estimated correlation of each pair of principal functions.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{inv_sqrt_psd_detailed, svd, Matrix};

/// Upper reporting bound for estimated correlations. Finite samples can push
/// the estimate slightly past 1, but anything beyond this is suspicious.
pub const PIC_REPORT_MAX: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    pub a: Matrix,
    pub b: Matrix,
    pub mean_f: Vec<f64>,
    pub mean_g: Vec<f64>,
    /// Identifier of the sample the transform was estimated on.
    pub fitted_on: String,
}

impl WhiteningTransform {
    pub fn d(&self) -> usize {
        self.a.rows()
    }

    /// `A (F̃ − mean_f)` for F-Net outputs only.
    pub fn transform_f(&self, f_tilde: &Matrix) -> Result<Matrix> {
        self.check_width(f_tilde, "F-Net")?;
        Ok(self.a.matmul(&f_tilde.sub_row_offsets(&self.mean_f)))
    }

    /// `B (G̃ − mean_g)` for G-Net outputs only.
    pub fn transform_g(&self, g_tilde: &Matrix) -> Result<Matrix> {
        self.check_width(g_tilde, "G-Net")?;
        Ok(self.b.matmul(&g_tilde.sub_row_offsets(&self.mean_g)))
    }

    fn check_width(&self, m: &Matrix, name: &str) -> Result<()> {
        if m.rows() != self.d() {
            return Err(contract(format!(
                "{name} outputs have {} rows, transform expects {}",
                m.rows(),
                self.d()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalFunctions {
    /// `d × n` values of the x-side principal functions.
    pub f: Matrix,
    pub g: Matrix,
    /// `diag((1/n) F Gᵀ)` clamped into `[-1, PIC_REPORT_MAX]`.
    pub pic_diagonal: Vec<f64>,
    /// The same diagonal before clamping.
    pub raw_diagonal: Vec<f64>,
}

/// Deviation of the principal functions from the orthonormality and
/// diagonal-alignment identities, in max-abs norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalityReport {
    pub f_gram_deviation: f64,
    pub g_gram_deviation: f64,
    pub cross_offdiag_max: f64,
}

impl OrthonormalityReport {
    pub fn within(&self, tol: f64) -> bool {
        self.f_gram_deviation <= tol && self.g_gram_deviation <= tol && self.cross_offdiag_max <= tol
    }
}

pub fn fit_whitening(f_tilde: &Matrix, g_tilde: &Matrix, fitted_on: &str) -> Result<WhiteningTransform> {
    if f_tilde.shape() != g_tilde.shape() {
        return Err(contract(format!(
            "F-Net outputs are {:?}, G-Net outputs are {:?}",
            f_tilde.shape(),
            g_tilde.shape()
        )));
    }
    let (d, n) = f_tilde.shape();
    if n <= d {
        return Err(contract(format!("whitening needs more than {d} samples, got {n}")));
    }
    let inv_n = 1.0 / n as f64;
    let mean_f = f_tilde.row_means();
    let mean_g = g_tilde.row_means();
    let fc = f_tilde.sub_row_offsets(&mean_f);
    let gc = g_tilde.sub_row_offsets(&mean_g);

    let s_f = whitener(&fc, "F-Net")?;
    let s_g = whitener(&gc, "G-Net")?;
    let l = s_f.matmul(&fc.matmul_t(&gc).scale(inv_n)).matmul(&s_g);
    let r = svd(&l)?;
    Ok(WhiteningTransform {
        a: r.u.t_matmul(&s_f),
        b: r.vt.matmul(&s_g),
        mean_f,
        mean_g,
        fitted_on: fitted_on.to_string(),
    })
}

fn whitener(centered: &Matrix, encoder: &'static str) -> Result<Matrix> {
    let d = centered.rows();
    let cov = centered
        .matmul_t(centered)
        .scale(1.0 / centered.cols() as f64)
        .symmetrized();
    let inv = inv_sqrt_psd_detailed(&cov, 0.0)?;
    if inv.clamped > 0 {
        return Err(Error::DegenerateEmbedding {
            encoder,
            rank: d - inv.clamped,
            dim: d,
        });
    }
    Ok(inv.matrix)
}

pub fn apply_whitening(w: &WhiteningTransform, f_tilde: &Matrix, g_tilde: &Matrix) -> Result<PrincipalFunctions> {
    if f_tilde.shape() != g_tilde.shape() {
        return Err(contract("F-Net and G-Net outputs differ in shape"));
    }
    if f_tilde.cols() == 0 {
        return Err(Error::EmptyDataset);
    }
    let f = w.transform_f(f_tilde)?;
    let g = w.transform_g(g_tilde)?;
    let n = f.cols() as f64;
    let raw_diagonal: Vec<f64> = (0..f.rows())
        .map(|i| f.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect();
    let pic_diagonal = raw_diagonal
        .iter()
        .map(|&v| {
            if !(-1.0..=PIC_REPORT_MAX).contains(&v) {
                log::warn!("estimated correlation {v} outside [-1, {PIC_REPORT_MAX}], clamping");
            }
            v.clamp(-1.0, PIC_REPORT_MAX)
        })
        .collect();
    Ok(PrincipalFunctions {
        f,
        g,
        pic_diagonal,
        raw_diagonal,
    })
}

pub fn orthonormality_report(pf: &PrincipalFunctions) -> OrthonormalityReport {
    let n = pf.f.cols() as f64;
    let d = pf.f.rows();
    let eye = Matrix::identity(d);
    let ff = pf.f.matmul_t(&pf.f).scale(1.0 / n);
    let gg = pf.g.matmul_t(&pf.g).scale(1.0 / n);
    let fg = pf.f.matmul_t(&pf.g).scale(1.0 / n);
    let mut off: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                off = off.max(fg[(i, j)].abs());
            }
        }
    }
    OrthonormalityReport {
        f_gram_deviation: ff.sub(&eye).max_abs(),
        g_gram_deviation: gg.sub(&eye).max_abs(),
        cross_offdiag_max: off,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Zero-mean rows with `(1/n) F Fᵀ = I`.
    fn white(d: usize, n: usize, seed: u64) -> Matrix {
        let raw = gaussian(d, n, seed);
        let centered = raw.sub_row_offsets(&raw.row_means());
        svd(&centered).unwrap().vt.scale((n as f64).sqrt())
    }

    fn correlated(d: usize, n: usize, seed: u64) -> (Matrix, Matrix) {
        let f = gaussian(d, n, seed).map(|v| v + 1.5);
        let mix = gaussian(d, d, seed + 1);
        let g = mix.matmul(&f).add(&gaussian(d, n, seed + 2));
        (f, g)
    }

    #[test]
    fn already_white_and_matched() {
        let f = white(3, 200, 1);
        let w = fit_whitening(&f, &f, "white").unwrap();
        let pf = apply_whitening(&w, &f, &f).unwrap();
        for v in &pf.pic_diagonal {
            assert!((v - 1.0).abs() < 1e-6);
        }
        // A = Uᵀ and B = Vᵀ with U = V.
        assert!(w.a.sub(&w.b).max_abs() < 1e-8);
        assert!(w.a.matmul_t(&w.a).sub(&Matrix::identity(3)).max_abs() < 1e-8);
    }

    #[test]
    fn rotated_copy_aligns() {
        let (f, _) = correlated(3, 300, 4);
        let theta: f64 = 0.7;
        let rot = Matrix::from_rows(&[
            &[theta.cos(), -theta.sin(), 0.0],
            &[theta.sin(), theta.cos(), 0.0],
            &[0.0, 0.0, 1.0],
        ]);
        let g = rot.matmul(&f);
        let w = fit_whitening(&f, &g, "rot").unwrap();
        let pf = apply_whitening(&w, &f, &g).unwrap();
        for v in &pf.pic_diagonal {
            assert!((v - 1.0).abs() < 1e-6);
        }
        assert!(pf.f.sub(&pf.g).max_abs() < 1e-6);
    }

    #[test]
    fn independent_outputs_have_small_diagonal() {
        let f = gaussian(3, 10_000, 10);
        let g = gaussian(3, 10_000, 11);
        let w = fit_whitening(&f, &g, "indep").unwrap();
        let pf = apply_whitening(&w, &f, &g).unwrap();
        assert!(pf.pic_diagonal.iter().all(|&v| v <= 0.1), "{:?}", pf.pic_diagonal);
    }

    #[test]
    fn collapsed_encoder_is_named() {
        let f = gaussian(2, 50, 1);
        let mut g = gaussian(2, 50, 2);
        let copy = g.row(0).to_vec();
        g.row_mut(1).copy_from_slice(&copy);
        match fit_whitening(&f, &g, "x") {
            Err(Error::DegenerateEmbedding { encoder, rank, dim }) => {
                assert_eq!((encoder, rank, dim), ("G-Net", 1, 2));
            }
            other => panic!("{other:?}"),
        }
        let constant = Matrix::from_fn(2, 50, |i, _| i as f64);
        assert!(matches!(
            fit_whitening(&constant, &f, "x"),
            Err(Error::DegenerateEmbedding { encoder: "F-Net", .. })
        ));
    }

    #[test]
    fn shape_errors() {
        assert!(fit_whitening(&Matrix::zeros(2, 10), &Matrix::zeros(3, 10), "x").is_err());
        assert!(fit_whitening(&gaussian(3, 3, 1), &gaussian(3, 3, 2), "x").is_err());
        let (f, g) = correlated(2, 40, 1);
        let w = fit_whitening(&f, &g, "x").unwrap();
        assert!(apply_whitening(&w, &gaussian(3, 5, 1), &gaussian(3, 5, 1)).is_err());
    }

    #[test]
    fn held_out_gram_is_near_identity() {
        let (f, g) = correlated(3, 4000, 20);
        let train: Vec<usize> = (0..3000).collect();
        let test: Vec<usize> = (3000..4000).collect();
        let w = fit_whitening(&f.select_columns(&train), &g.select_columns(&train), "train").unwrap();
        let pf = apply_whitening(&w, &f.select_columns(&test), &g.select_columns(&test)).unwrap();
        let rep = orthonormality_report(&pf);
        assert!(rep.f_gram_deviation < 0.1 && rep.g_gram_deviation < 0.1, "{rep:?}");
    }

    #[test]
    fn clamps_only_the_reported_diagonal() {
        let w = WhiteningTransform {
            a: Matrix::identity(1),
            b: Matrix::identity(1),
            mean_f: vec![0.0],
            mean_g: vec![0.0],
            fitted_on: "manual".into(),
        };
        let f = Matrix::from_rows(&[&[1.0, -1.0]]);
        let g = f.scale(1.5);
        let pf = apply_whitening(&w, &f, &g).unwrap();
        assert_eq!(pf.raw_diagonal, vec![1.5]);
        assert_eq!(pf.pic_diagonal, vec![PIC_REPORT_MAX]);
    }

    #[test]
    fn serde_round_trip() {
        let (f, g) = correlated(2, 30, 3);
        let w = fit_whitening(&f, &g, "train").unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<WhiteningTransform>(&s).unwrap(), w);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fitting_set_contract(seed in any::<u64>(), d in 1usize..5) {
            let (f, g) = correlated(d, 120, seed);
            let w = fit_whitening(&f, &g, "p").unwrap();
            let pf = apply_whitening(&w, &f, &g).unwrap();
            let rep = orthonormality_report(&pf);
            prop_assert!(rep.within(1e-6), "{rep:?}");
            for pair in pf.raw_diagonal.windows(2) {
                prop_assert!(pair[0] >= pair[1] - 1e-12);
            }
        }

        #[test]
        fn refitting_principal_functions_is_orthogonal(seed in any::<u64>(), d in 1usize..5) {
            let (f, g) = correlated(d, 120, seed);
            let w = fit_whitening(&f, &g, "p").unwrap();
            let pf = apply_whitening(&w, &f, &g).unwrap();
            let again = fit_whitening(&pf.f, &pf.g, "again").unwrap();
            let eye = Matrix::identity(d);
            prop_assert!(again.a.matmul_t(&again.a).sub(&eye).max_abs() < 1e-6);
            prop_assert!(again.b.matmul_t(&again.b).sub(&eye).max_abs() < 1e-6);
        }
    }
}
