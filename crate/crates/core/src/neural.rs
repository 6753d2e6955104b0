//! Small fully connected networks (the F-Net and G-Net encoders), two
//! optimizers, and the training loop that drives the PIC loss.
//!
//! Everything here is single-threaded and deterministic given the seeds in
//! [`MlpConfig`] and [`TrainConfig`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::pic_objective::{pic_loss, BatchOutputs, LossReport, DEFAULT_LOSS_EPS};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 8] = b"CANNMLP\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// No nonlinearity; mostly useful in tests.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, output width `d`.
    pub layer_widths: Vec<usize>,
    /// One activation per hidden layer; the output layer is linear.
    pub activations: Vec<Activation>,
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_clip: Option<f64>,
}

impl MlpConfig {
    /// Same activation on every hidden layer, no clipping.
    pub fn uniform(layer_widths: Vec<usize>, activation: Activation, init_seed: u64) -> Self {
        let hidden = layer_widths.len().saturating_sub(2);
        Self {
            layer_widths,
            activations: vec![activation; hidden],
            init_seed,
            output_clip: None,
        }
    }

    pub fn with_clip(mut self, bound: f64) -> Self {
        self.output_clip = Some(bound);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs input, at least one hidden and an output width; got {w:?}"
            )));
        }
        if w.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {w:?}")));
        }
        if self.activations.len() != w.len() - 2 {
            return Err(Error::Config(format!(
                "{} hidden layers but {} activations",
                w.len() - 2,
                self.activations.len()
            )));
        }
        if let Some(c) = self.output_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("output clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }

    fn activation(&self, layer: usize) -> Activation {
        self.activations.get(layer).copied().unwrap_or(Activation::Identity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros_for(cfg: &MlpConfig) -> Self {
        let layers = cfg
            .layer_widths
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Per layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.as_slice().len());
            l.weights.as_mut_slice().copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn matches(&self, cfg: &MlpConfig) -> bool {
        self.layers.len() + 1 == cfg.layer_widths.len()
            && self.layers.iter().zip(cfg.layer_widths.windows(2)).all(|(l, w)| {
                l.weights.shape() == (w[1], w[0]) && l.bias.len() == w[1]
            })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Weights uniform in `±√(3 / fan_in)` (unit-variance preserving for linear
/// layers), biases zero.
pub fn mlp_init(cfg: &MlpConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut params = MlpParams::zeros_for(cfg);
    for l in &mut params.layers {
        let bound = (3.0 / l.weights.cols() as f64).sqrt();
        for w in l.weights.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Intermediate values kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

pub fn forward(cfg: &MlpConfig, p: &MlpParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if !p.matches(cfg) {
        return Err(contract("parameters do not match the network configuration"));
    }
    if x.rows() != cfg.input_width() {
        return Err(contract(format!(
            "network expects {} input features, batch has {}",
            cfg.input_width(),
            x.rows()
        )));
    }
    let depth = p.layers.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth);
    let mut a = x.clone();
    for (idx, layer) in p.layers.iter().enumerate() {
        let mut z = layer.weights.matmul(&a);
        for (i, &b) in layer.bias.iter().enumerate() {
            z.row_mut(i).iter_mut().for_each(|v| *v += b);
        }
        let next = if idx + 1 == depth {
            match cfg.output_clip {
                Some(c) => z.map(|v| v.clamp(-c, c)),
                None => z.clone(),
            }
        } else {
            let act = cfg.activation(idx);
            z.map(|v| act.apply(v))
        };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    Ok((a, ForwardCache { inputs, pre }))
}

/// Reverse-mode gradients of a scalar whose gradient with respect to the
/// network output is `grad_out`. Clipped outputs pass no gradient.
pub fn backward(
    cfg: &MlpConfig,
    p: &MlpParams,
    cache: &ForwardCache,
    grad_out: &Matrix,
) -> Result<MlpParams> {
    let depth = p.layers.len();
    if cache.pre.len() != depth || !p.matches(cfg) {
        return Err(contract("forward cache does not belong to this network"));
    }
    if grad_out.shape() != cache.pre[depth - 1].shape() {
        return Err(contract(format!(
            "output gradient is {:?}, network output is {:?}",
            grad_out.shape(),
            cache.pre[depth - 1].shape()
        )));
    }
    let mut grads = MlpParams::zeros_for(cfg);
    let mut delta = match cfg.output_clip {
        Some(c) => grad_out.zip_with(&cache.pre[depth - 1], |g, z| if z.abs() > c { 0.0 } else { g }),
        None => grad_out.clone(),
    };
    for idx in (0..depth).rev() {
        let input = &cache.inputs[idx];
        grads.layers[idx].weights = delta.matmul_t(input);
        grads.layers[idx].bias = delta.row_sums();
        if idx == 0 {
            break;
        }
        let mut upstream = p.layers[idx].weights.t_matmul(&delta);
        let act = cfg.activation(idx - 1);
        // `input` is this layer's activation output, so tanh' needs no recompute.
        for ((g, &z), &a) in upstream
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre[idx - 1].as_slice())
            .zip(input.as_slice())
        {
            *g *= act.derivative(z, a);
        }
        delta = upstream;
    }
    Ok(grads)
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub params: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub format_version: u32,
    pub config: MlpConfig,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn init(config: MlpConfig) -> Result<Self> {
        let params = mlp_init(&config)?;
        Ok(Self { config, params })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        forward(&self.config, &self.params, x).map(|(out, _)| out)
    }

    pub fn to_document(&self) -> MlpDocument {
        MlpDocument {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            params: self.params.to_flat(),
        }
    }

    pub fn from_document(doc: MlpDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        doc.config.validate()?;
        let mut params = MlpParams::zeros_for(&doc.config);
        params
            .set_flat(&doc.params)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        if !params.is_finite() {
            return Err(Error::Serialization("non-finite model parameter".into()));
        }
        Ok(Self {
            config: doc.config,
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document()).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Magic, version (u32), config JSON length (u32) and bytes, parameter
    /// count (u64), parameters as little-endian f64.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Serialization(e.to_string()))?;
        let flat = self.params.to_flat();
        let mut out = Vec::with_capacity(8 + 4 + 4 + cfg.len() + 8 + 8 * flat.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Serialization(format!("binary model: {m}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != BINARY_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let cfg_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let config: MlpConfig =
            serde_json::from_slice(take(cfg_len)?).map_err(|e| Error::Serialization(e.to_string()))?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(count.checked_mul(8).ok_or_else(|| bad("bad length"))?)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::from_document(MlpDocument {
            format_version: version,
            config,
            params,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Gd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Gd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Stateful optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let state = matches!(config, OptimizerConfig::Adam { .. });
        Self {
            config,
            m: if state { vec![0.0; n_params] } else { Vec::new() },
            v: if state { vec![0.0; n_params] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "optimizer length mismatch");
        self.t += 1;
        match self.config {
            OptimizerConfig::Gd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Samples(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Samples(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(n) => Ok(BatchSize::Samples(n as usize)),
            Repr::Name(s) if s == "full" => Ok(BatchSize::Full),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "batch_size must be \"full\" or a count, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: BatchSize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_loss_eps")]
    pub loss_eps: f64,
    /// Drives mini-batch shuffling.
    #[serde(default)]
    pub seed: u64,
}

fn default_loss_eps() -> f64 {
    DEFAULT_LOSS_EPS
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let BatchSize::Samples(0) = self.batch_size {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.loss_eps >= 0.0 && self.loss_eps.is_finite()) {
            return Err(Error::Config("loss_eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub kyfan_term: f64,
    pub g_energy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub f_net: Mlp,
    pub g_net: Mlp,
    pub history: Vec<EpochRecord>,
    /// Full-batch training loss before the first update.
    pub initial_loss: f64,
    /// Full-batch training loss of the returned parameters.
    pub final_loss: f64,
}

/// Loss of both encoders on a whole dataset.
pub fn evaluate_loss(f_net: &Mlp, g_net: &Mlp, data: &PairedDataset, eps: f64) -> Result<LossReport> {
    let f = f_net.predict(&data.x)?;
    let g = g_net.predict(&data.y)?;
    pic_loss(&BatchOutputs::new(f, g)?, eps)
}

/// Trains both encoders on the training part of `data`.
pub fn train_ca_nn(
    data: &PairedDataset,
    f_cfg: &MlpConfig,
    g_cfg: &MlpConfig,
    t_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    f_cfg.validate()?;
    g_cfg.validate()?;
    t_cfg.validate()?;
    let d = f_cfg.output_width();
    if g_cfg.output_width() != d {
        return Err(Error::Config(format!(
            "F-Net outputs {d} dimensions but G-Net outputs {}",
            g_cfg.output_width()
        )));
    }
    let train = data.train();
    let n = train.n();
    if n < d {
        return Err(contract(format!("{n} training samples cannot support d = {d}")));
    }

    let mut f_net = Mlp::init(f_cfg.clone())?;
    let mut g_net = Mlp::init(g_cfg.clone())?;
    let n_f = f_net.params.num_params();
    let mut flat: Vec<f64> = f_net.params.to_flat();
    flat.extend(g_net.params.to_flat());
    let mut opt = Optimizer::new(t_cfg.optimizer, flat.len());

    let batches = plan_batches(n, d, t_cfg.batch_size);
    let full_batch = batches.len() == 1;
    let mut rng = ChaCha8Rng::seed_from_u64(t_cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(t_cfg.epochs);
    let mut initial_loss = None;

    for epoch in 1..=t_cfg.epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let mut sums = [0.0; 3];
        for range in &batches {
            let (x, y) = if full_batch {
                (train.x.clone(), train.y.clone())
            } else {
                let idx = &order[range.clone()];
                (train.x.select_columns(idx), train.y.select_columns(idx))
            };
            let (f_out, f_cache) = forward(&f_net.config, &f_net.params, &x)?;
            let (g_out, g_cache) = forward(&g_net.config, &g_net.params, &y)?;
            if !f_out.is_finite() || !g_out.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: f64::NAN });
            }
            let report = pic_loss(&BatchOutputs::new(f_out, g_out)?, t_cfg.loss_eps)?;
            if !report.loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: report.loss });
            }
            if full_batch && initial_loss.is_none() {
                initial_loss = Some(report.loss);
            }
            sums[0] += report.loss;
            sums[1] += report.kyfan_term;
            sums[2] += report.g_energy;

            let gf = backward(&f_net.config, &f_net.params, &f_cache, &report.grad_f)?;
            let gg = backward(&g_net.config, &g_net.params, &g_cache, &report.grad_g)?;
            let mut grads = gf.to_flat();
            grads.extend(gg.to_flat());
            opt.step(&mut flat, &grads);
            f_net.params.set_flat(&flat[..n_f])?;
            g_net.params.set_flat(&flat[n_f..])?;
        }
        if initial_loss.is_none() {
            // Mini-batch mode: the first epoch has already moved the weights,
            // so score the initialization separately.
            let f0 = Mlp::init(f_cfg.clone())?;
            let g0 = Mlp::init(g_cfg.clone())?;
            initial_loss = Some(evaluate_loss(&f0, &g0, &train, t_cfg.loss_eps)?.loss);
        }
        let k = batches.len() as f64;
        let rec = EpochRecord {
            epoch,
            loss: sums[0] / k,
            kyfan_term: sums[1] / k,
            g_energy: sums[2] / k,
        };
        log::debug!("epoch {epoch}: loss {:.6} kyfan {:.6}", rec.loss, rec.kyfan_term);
        history.push(rec);
    }

    let final_report = evaluate_loss(&f_net, &g_net, &train, t_cfg.loss_eps).map_err(|e| match e {
        Error::ContractViolation(_) => Error::TrainingDiverged {
            epoch: t_cfg.epochs,
            loss: f64::NAN,
        },
        other => other,
    })?;
    let initial_loss = initial_loss.expect("at least one epoch ran");
    if final_report.loss > initial_loss {
        log::warn!(
            "training ended above its starting loss ({} > {initial_loss})",
            final_report.loss
        );
    }
    Ok(TrainOutcome {
        f_net,
        g_net,
        history,
        initial_loss,
        final_loss: final_report.loss,
    })
}

/// Contiguous index ranges; a short tail (fewer than `d` samples) joins the
/// previous batch so every batch can support the loss.
fn plan_batches(n: usize, d: usize, size: BatchSize) -> Vec<std::ops::Range<usize>> {
    let size = match size {
        BatchSize::Full => n,
        BatchSize::Samples(s) => s.clamp(d.max(1), n),
    };
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        if end - start < d {
            if let Some(last) = out.last_mut() {
                last.end = end;
                break;
            }
        }
        out.push(start..end);
        start = end;
    }
    out
}
