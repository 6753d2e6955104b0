//! Analytic ground truth and synthetic data generators.
//!
//! - binary symmetric channel (BSC) on `n`-bit strings: exact pmf, closed-form
//!   spectrum and a sampler;
//! - additive Gaussian noise channel: normalised Hermite polynomials (its
//!   principal functions), closed-form correlations and a sampler;
//! - a two-mode Gaussian mixture over a scalar pair.
//!
//! Every sampler is a pure function of its arguments and seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classical_ca::JointPmf;
use crate::dataset::{FeatureKind, PairedDataset, Provenance};
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

/// Largest BSC string length for which the full joint pmf is materialised.
pub const MAX_PMF_BITS: usize = 12;

const MAX_HERMITE_DEGREE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BscSpec {
    pub n_bits: usize,
    /// Crossover probability.
    pub delta: f64,
    /// Probability that an input bit is 1.
    pub p: f64,
}

impl BscSpec {
    pub fn uniform(n_bits: usize, delta: f64) -> Self {
        Self {
            n_bits,
            delta,
            p: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(contract(format!("crossover {} outside [0, 1]", self.delta)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(contract(format!("input bias {} outside (0, 1)", self.p)));
        }
        if self.n_bits == 0 {
            return Err(contract("BSC needs at least one bit"));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Principal correlations of the uniform-input BSC: `C(n, k)` copies of
/// `|1 - 2δ|^k` for `k = 1..=n`.
pub fn bsc_spectrum_uniform(n_bits: usize, delta: f64) -> Vec<(f64, usize)> {
    let base = (1.0 - 2.0 * delta).abs();
    (1..=n_bits)
        .map(|k| (base.powi(k as i32), binomial(n_bits, k)))
        .collect()
}

/// Expands `(value, multiplicity)` pairs and sorts descending.
pub fn expand_spectrum(spectrum: &[(f64, usize)]) -> Vec<f64> {
    let mut out: Vec<f64> = spectrum
        .iter()
        .flat_map(|&(v, m)| std::iter::repeat_n(v, m))
        .collect();
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out
}

fn bit_label(value: usize, n_bits: usize) -> String {
    (0..n_bits)
        .map(|i| if value >> (n_bits - 1 - i) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Exact joint pmf of `(X, Y = X ⊕ Z)` over `n`-bit strings.
///
/// Labels are the bit strings, most significant bit first, so lexicographic
/// and numeric order agree.
pub fn bsc_joint_pmf(spec: &BscSpec) -> Result<JointPmf> {
    spec.validate()?;
    if spec.n_bits > MAX_PMF_BITS {
        return Err(Error::Capacity {
            cells: 1usize << (2 * spec.n_bits.min(31)),
            limit: 1 << (2 * MAX_PMF_BITS),
        });
    }
    let n = spec.n_bits;
    let size = 1usize << n;
    let px: Vec<f64> = (0..size)
        .map(|x| {
            let ones = (x as u32).count_ones() as i32;
            spec.p.powi(ones) * (1.0 - spec.p).powi(n as i32 - ones)
        })
        .collect();
    let flips: Vec<f64> = (0..=n)
        .map(|h| spec.delta.powi(h as i32) * (1.0 - spec.delta).powi((n - h) as i32))
        .collect();
    let probs = Matrix::from_fn(size, size, |x, y| {
        px[x] * flips[((x ^ y) as u32).count_ones() as usize]
    });
    let labels: Vec<String> = (0..size).map(|v| bit_label(v, n)).collect();
    JointPmf::new(probs, labels.clone(), labels)
}

/// Draws `n_samples` i.i.d. pairs; `x` and `y` are `n_bits × n` 0/1 matrices.
pub fn bsc_sample(spec: &BscSpec, n_samples: usize, seed: u64) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = spec.n_bits;
    let mut x = Matrix::zeros(nb, n_samples);
    let mut y = Matrix::zeros(nb, n_samples);
    for k in 0..n_samples {
        for i in 0..nb {
            let bit = rng.random_bool(spec.p);
            let flip = rng.random_bool(spec.delta);
            x[(i, k)] = if bit { 1.0 } else { 0.0 };
            y[(i, k)] = if bit ^ flip { 1.0 } else { 0.0 };
        }
    }
    PairedDataset::new(
        x,
        y,
        FeatureKind::Binary,
        FeatureKind::Binary,
        Provenance::new(
            format!("bsc(n_bits={nb}, delta={}, p={})", spec.delta, spec.p),
            Some(seed),
        ),
    )
}

/// Normalised Hermite polynomial of degree `i` orthonormal under `N(0, r)`:
/// `He_i(x/√r) / √i!`.
///
/// Uses the normalised three-term recurrence
/// `h_{k+1} = (z h_k - √k h_{k-1}) / √(k+1)` with `z = x/√r`.
pub fn hermite(i: usize, r: f64, x: f64) -> f64 {
    assert!(i <= MAX_HERMITE_DEGREE, "degree {i} exceeds {MAX_HERMITE_DEGREE}");
    assert!(r > 0.0, "variance must be positive");
    let z = x / r.sqrt();
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..i {
        let next = (z * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    /// Variance of X.
    pub sigma1: f64,
    /// Variance of the additive noise.
    pub sigma2: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// `X ~ N(0, σ₁)`, `Y = X + Z`, `Z ~ N(0, σ₂)`, variances as given.
pub fn gaussian_pair_sample(spec: &GaussianPairSpec) -> Result<PairedDataset> {
    if !(spec.sigma1 > 0.0 && spec.sigma2 > 0.0) {
        return Err(contract("Gaussian variances must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (s1, s2) = (spec.sigma1.sqrt(), spec.sigma2.sqrt());
    let mut x = Vec::with_capacity(spec.n_samples);
    let mut y = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        x.push(s1 * a);
        y.push(s1 * a + s2 * b);
    }
    PairedDataset::new(
        Matrix::new(1, spec.n_samples, x)?,
        Matrix::new(1, spec.n_samples, y)?,
        FeatureKind::Continuous,
        FeatureKind::Continuous,
        Provenance::new(
            format!("gaussian(sigma1={}, sigma2={})", spec.sigma1, spec.sigma2),
            Some(spec.seed),
        ),
    )
}

/// Closed form `(σ₁ / (σ₁ + σ₂))^{i/2}`, `i = 1..=k`, of
/// `E[H_i^{(σ₁)}(X) H_i^{(σ₁+σ₂)}(Y)]`.
pub fn gaussian_reference_values(sigma1: f64, sigma2: f64, k: usize) -> Vec<f64> {
    let rho = (sigma1 / (sigma1 + sigma2)).sqrt();
    (1..=k).map(|i| rho.powi(i as i32)).collect()
}

/// Monte-Carlo estimate of `E[H_i^{(σ₁)}(X) H_i^{(σ₁+σ₂)}(Y)]` for `i = 1..=k`.
pub fn hermite_inner_products_mc(sigma1: f64, sigma2: f64, k: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s1, s2) = (sigma1.sqrt(), sigma2.sqrt());
    let mut acc = vec![0.0; k];
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let x = s1 * a;
        let y = x + s2 * b;
        for (i, slot) in acc.iter_mut().enumerate() {
            *slot += hermite(i + 1, sigma1, x) * hermite(i + 1, sigma1 + sigma2, y);
        }
    }
    acc.into_iter().map(|s| s / n as f64).collect()
}

/// Samples of a two-mode Gaussian mixture over the scalar pair `(X, Y)`.
#[derive(Debug, Clone)]
pub struct MultimodalSample {
    pub data: PairedDataset,
    /// Latent mode `B` of every sample (0 or 1).
    pub modes: Vec<u8>,
}

/// `(X, Y) ~ N(μ_B, Σ)` with `B ~ Bernoulli(p_mode)`.
pub fn multimodal_gaussian_sample(
    mu0: [f64; 2],
    mu1: [f64; 2],
    cov: &Matrix,
    p_mode: f64,
    n: usize,
    seed: u64,
) -> Result<MultimodalSample> {
    if cov.shape() != (2, 2) {
        return Err(contract("mixture covariance must be 2x2"));
    }
    if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
        return Err(contract("mixture covariance must be symmetric"));
    }
    if !(0.0..=1.0).contains(&p_mode) {
        return Err(contract("mode probability outside [0, 1]"));
    }
    // 2x2 Cholesky
    let l00 = cov[(0, 0)];
    if l00 <= 0.0 {
        return Err(contract("mixture covariance is not positive definite"));
    }
    let l00 = l00.sqrt();
    let l10 = cov[(1, 0)] / l00;
    let rem = cov[(1, 1)] - l10 * l10;
    if rem <= 0.0 {
        return Err(contract("mixture covariance is not positive definite"));
    }
    let l11 = rem.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for _ in 0..n {
        let b = rng.random_bool(p_mode);
        let mu = if b { mu1 } else { mu0 };
        let a: f64 = rng.sample(StandardNormal);
        let c: f64 = rng.sample(StandardNormal);
        x.push(mu[0] + l00 * a);
        y.push(mu[1] + l10 * a + l11 * c);
        modes.push(b as u8);
    }
    let data = PairedDataset::new(
        Matrix::new(1, n, x)?,
        Matrix::new(1, n, y)?,
        FeatureKind::Continuous,
        FeatureKind::Continuous,
        Provenance::new(format!("multimodal(mu0={mu0:?}, mu1={mu1:?}, p={p_mode})"), Some(seed)),
    )?;
    Ok(MultimodalSample { data, modes })
}
