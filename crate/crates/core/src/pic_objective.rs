//! The PIC training loss and its gradient with respect to encoder outputs.
//!
//! For outputs `F̃, G̃ ∈ ℝ^{d×n}` (columns are samples) the loss is
//!
//! ```text
//! loss = -2 ‖C_f^{-1/2} C_fg‖_* + (1/n) Σ_k ‖g̃_k‖²
//! C_f  = (1/n) F̃ F̃ᵀ,   C_fg = (1/n) F̃ G̃ᵀ
//! ```
//!
//! Two routes evaluate the nuclear-norm term:
//!
//! - [`KyFanPath::Surrogate`] (default): `Σ √eig(M)` with
//!   `M = C_fgᵀ (C_f^{-1} + εI) C_fg`. At `ε = 0` this equals the exact term
//!   because `‖B‖_* = Σ √eig(BᵀB)`.
//! - [`KyFanPath::Exact`]: singular values of `C_f^{-1/2} C_fg` directly.
//!
//! Gradients are analytic. On the surrogate route `∂K/∂M = ½ M^{-1/2}`; on
//! the exact route `∂K/∂B = U Vᵀ` and the derivative of `C_f^{-1/2}` uses
//! divided differences in the eigenbasis of `C_f`. Where the term is not
//! differentiable (zero eigenvalues of `M`, repeated or zero singular values
//! of `B`) the gradient is the subgradient obtained by dropping null modes of
//! `M`, respectively `U Vᵀ` from whatever SVD the kernel returns.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{eig_sym, spectral_apply, svd, Matrix, RANK_CLAMP};

/// Loss regulariser used for training.
pub const DEFAULT_LOSS_EPS: f64 = 1e-3;

/// Encoder outputs for one batch, `d × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    f_tilde: Matrix,
    g_tilde: Matrix,
}

impl BatchOutputs {
    pub fn new(f_tilde: Matrix, g_tilde: Matrix) -> Result<Self> {
        if f_tilde.shape() != g_tilde.shape() {
            return Err(contract(format!(
                "F-Net outputs are {:?} but G-Net outputs are {:?}",
                f_tilde.shape(),
                g_tilde.shape()
            )));
        }
        let (d, n) = f_tilde.shape();
        if d == 0 {
            return Err(contract("output dimension must be at least 1"));
        }
        if n < d {
            return Err(contract(format!("batch of {n} samples is smaller than d = {d}")));
        }
        Ok(Self { f_tilde, g_tilde })
    }

    pub fn f_tilde(&self) -> &Matrix {
        &self.f_tilde
    }

    pub fn g_tilde(&self) -> &Matrix {
        &self.g_tilde
    }

    pub fn d(&self) -> usize {
        self.f_tilde.rows()
    }

    pub fn n(&self) -> usize {
        self.f_tilde.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub c_f: Matrix,
    pub c_fg: Matrix,
    pub g_energy: f64,
}

/// `C_f = (1/n) F̃F̃ᵀ`, `C_fg = (1/n) F̃G̃ᵀ`, `E‖g̃‖² ≈ (1/n) Σ‖g̃_k‖²`.
pub fn empirical_covariances(b: &BatchOutputs) -> Covariances {
    let inv_n = 1.0 / b.n() as f64;
    let f = &b.f_tilde;
    let g = &b.g_tilde;
    let c_f = f.matmul_t(f).scale(inv_n).symmetrized();
    let c_fg = f.matmul_t(g).scale(inv_n);
    let g_energy = g.as_slice().iter().map(|v| v * v).sum::<f64>() * inv_n;
    Covariances { c_f, c_fg, g_energy }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KyFanPath {
    #[default]
    Surrogate,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub eps: f64,
    pub path: KyFanPath,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_LOSS_EPS,
            path: KyFanPath::Surrogate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// The nuclear-norm term `‖C_f^{-1/2} C_fg‖_*` (or its surrogate).
    pub kyfan_term: f64,
    /// `E‖g̃(Y)‖²`.
    pub g_energy: f64,
    pub grad_f: Matrix,
    pub grad_g: Matrix,
}

/// Loss and gradients on the surrogate route with regulariser `eps`.
pub fn pic_loss(b: &BatchOutputs, eps: f64) -> Result<LossReport> {
    pic_loss_with(
        b,
        LossOptions {
            eps,
            path: KyFanPath::Surrogate,
        },
    )
}

/// Gradients only; see [`pic_loss`].
pub fn pic_loss_grad(b: &BatchOutputs, eps: f64) -> Result<(Matrix, Matrix)> {
    pic_loss(b, eps).map(|r| (r.grad_f, r.grad_g))
}

pub fn pic_loss_with(b: &BatchOutputs, opts: LossOptions) -> Result<LossReport> {
    if !(opts.eps >= 0.0 && opts.eps.is_finite()) {
        return Err(contract("loss eps must be finite and non-negative"));
    }
    let cov = empirical_covariances(b);
    let d = b.d();
    let n = b.n() as f64;

    let (w, q) = eig_sym(&cov.c_f)?;
    let w_max = w[0];
    let w_min = w[d - 1];
    let singular = !(w_max > 0.0) || w_min <= RANK_CLAMP * w_max;

    // Both routes reduce to dK/dC_f (symmetric) and dK/dC_fg.
    let (kyfan, dk_dcf, dk_dcfg) = match opts.path {
        KyFanPath::Surrogate => {
            if singular && opts.eps == 0.0 {
                return Err(Error::SingularCovariance { min_eigenvalue: w_min });
            }
            let inv_w: Vec<f64> = w
                .iter()
                .map(|&wi| if wi > RANK_CLAMP * w_max { 1.0 / wi } else { 0.0 })
                .collect();
            let c_f_inv = spectral_apply(&q, &inv_w);
            let mut p = c_f_inv.clone();
            for i in 0..d {
                p[(i, i)] += opts.eps;
            }
            let c = &cov.c_fg;
            let m = c.t_matmul(&p.matmul(c)).symmetrized();
            let (mu, vm) = eig_sym(&m)?;
            let mu_max = mu[0].max(0.0);
            let kyfan: f64 = mu.iter().map(|&v| v.max(0.0).sqrt()).sum();
            let coef: Vec<f64> = mu
                .iter()
                .map(|&v| {
                    if v > RANK_CLAMP * mu_max && v > 0.0 {
                        0.5 / v.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            let wm = spectral_apply(&vm, &coef);
            let dk_dcfg = p.matmul(c).matmul(&wm).scale(2.0);
            let cw = c.matmul(&wm).matmul_t(c);
            let dk_dcf = c_f_inv.matmul(&cw).matmul(&c_f_inv).scale(-1.0).symmetrized();
            (kyfan, dk_dcf, dk_dcfg)
        }
        KyFanPath::Exact => {
            if singular {
                return Err(Error::SingularCovariance { min_eigenvalue: w_min });
            }
            let roots: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
            let s = spectral_apply(&q, &roots.iter().map(|r| 1.0 / r).collect::<Vec<_>>());
            let bm = s.matmul(&cov.c_fg);
            let r = svd(&bm)?;
            let kyfan: f64 = r.s.iter().sum();
            let polar = r.u.matmul(&r.vt);
            let dk_dcfg = s.matmul(&polar);
            // dK/dS = U Vᵀ C_fgᵀ, pulled back through S = C_f^{-1/2}.
            let g_s = polar.matmul_t(&cov.c_fg);
            let mut inner = q.t_matmul(&g_s.matmul(&q));
            for i in 0..d {
                for j in 0..d {
                    // (w_i^{-1/2} - w_j^{-1/2}) / (w_i - w_j), stable at w_i = w_j.
                    let gamma = -1.0 / (roots[i] * roots[j] * (roots[i] + roots[j]));
                    inner[(i, j)] *= gamma;
                }
            }
            let dk_dcf = q.matmul(&inner).matmul_t(&q).symmetrized();
            (kyfan, dk_dcf, dk_dcfg)
        }
    };

    let f = &b.f_tilde;
    let g = &b.g_tilde;
    // dC_f = (dF Fᵀ + F dFᵀ)/n, dC_fg = dF Gᵀ/n.
    let dk_df = dk_dcf
        .matmul(f)
        .scale(2.0 / n)
        .add(&dk_dcfg.matmul(g).scale(1.0 / n));
    let dk_dg = dk_dcfg.t_matmul(f).scale(1.0 / n);

    let grad_f = dk_df.scale(-2.0);
    let grad_g = dk_dg.scale(-2.0).add(&g.scale(2.0 / n));
    let loss = -2.0 * kyfan + cov.g_energy;
    if !loss.is_finite() || !grad_f.is_finite() || !grad_g.is_finite() {
        return Err(contract("PIC loss produced non-finite values"));
    }
    Ok(LossReport {
        loss,
        kyfan_term: kyfan,
        g_energy: cov.g_energy,
        grad_f,
        grad_g,
    })
}
