//! Versioned TOML experiment configuration.
//!
//! ```toml
//! format_version = 1
//! mode = "neural"          # or "classical"
//! seed = 7
//! d = 5
//!
//! [dataset]
//! kind = "bsc"
//! n_bits = 5
//! delta = 0.1
//! n_train = 15000
//! n_test = 1500
//!
//! [f_net]
//! hidden = [32, 32]
//! activation = "relu"
//!
//! [g_net]
//! hidden = [32, 32]
//! activation = "relu"
//!
//! [train]
//! epochs = 2000
//! optimizer = { kind = "gd", lr = 0.01 }
//!
//! [[planes]]
//! axes = [1, 2]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_data::CsvSchema;
use crate::neural::{Activation, BatchSize, MlpConfig, OptimizerConfig, TrainConfig};
use crate::pic_objective::DEFAULT_LOSS_EPS;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Neural,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Bsc {
        n_bits: usize,
        delta: f64,
        #[serde(default = "half")]
        p: f64,
        n_train: usize,
        #[serde(default)]
        n_test: usize,
    },
    Gaussian {
        sigma1: f64,
        sigma2: f64,
        n_train: usize,
        #[serde(default)]
        n_test: usize,
    },
    Multimodal {
        mu0: [f64; 2],
        mu1: [f64; 2],
        cov: [[f64; 2]; 2],
        #[serde(default = "half")]
        p_mode: f64,
        n_train: usize,
        #[serde(default)]
        n_test: usize,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        /// Standardize continuous x columns with training statistics.
        #[serde(default)]
        standardize: bool,
        #[serde(default)]
        test_fraction: f64,
    },
    /// A joint pmf table; classical mode only.
    Pmf { path: PathBuf },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub clip: Option<f64>,
}

impl EncoderConfig {
    pub fn mlp(&self, input: usize, d: usize, init_seed: u64) -> MlpConfig {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(d);
        MlpConfig {
            layer_widths: widths,
            activations: vec![self.activation; self.hidden.len()],
            init_seed,
            output_clip: self.clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: BatchSize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_eps")]
    pub loss_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_LOSS_EPS
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            loss_eps: self.loss_eps,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneRequest {
    /// One-based component numbers.
    pub axes: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    /// Every random choice derives from this; see [`Seeds`].
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub f_net: Option<EncoderConfig>,
    #[serde(default)]
    pub g_net: Option<EncoderConfig>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub planes: Vec<PlaneRequest>,
}

/// Seeds used by one run, all derived from the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub data: u64,
    pub split: u64,
    pub f_init: u64,
    pub g_init: u64,
    pub shuffle: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            base,
            data: base,
            split: base.wrapping_add(1),
            f_init: base.wrapping_add(2),
            g_init: base.wrapping_add(3),
            shuffle: base.wrapping_add(4),
        }
    }
}

/// Neural-mode pieces that are optional in the document but required to train.
pub struct NeuralSettings<'a> {
    pub d: usize,
    pub f_net: &'a EncoderConfig,
    pub g_net: &'a EncoderConfig,
    pub train: &'a TrainSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_base(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        match self.mode {
            Mode::Neural => {
                let s = self.neural()?;
                if s.d == 0 {
                    return Err(Error::Config("d must be at least 1".into()));
                }
                s.train.train_config(0).validate()?;
                if matches!(self.dataset, DatasetSource::Pmf { .. }) {
                    return Err(Error::Config("a pmf dataset only supports mode = \"classical\"".into()));
                }
            }
            Mode::Classical => {
                if matches!(
                    self.dataset,
                    DatasetSource::Gaussian { .. } | DatasetSource::Multimodal { .. }
                ) {
                    return Err(Error::Config("classical mode needs categorical data".into()));
                }
            }
        }
        for p in &self.planes {
            if p.axes[0] == 0 || p.axes[1] == 0 || p.axes[0] == p.axes[1] {
                return Err(Error::Config(format!(
                    "plane axes {:?} must be two different one-based components",
                    p.axes
                )));
            }
        }
        if let DatasetSource::Csv { test_fraction, .. } = &self.dataset {
            if !(0.0..1.0).contains(test_fraction) {
                return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn neural(&self) -> Result<NeuralSettings<'_>> {
        let missing = |what: &str| Error::Config(format!("neural mode needs `{what}`"));
        Ok(NeuralSettings {
            d: self.d.ok_or_else(|| missing("d"))?,
            f_net: self.f_net.as_ref().ok_or_else(|| missing("[f_net]"))?,
            g_net: self.g_net.as_ref().ok_or_else(|| missing("[g_net]"))?,
            train: self.train.as_ref().ok_or_else(|| missing("[train]"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BSC: &str = r#"
format_version = 1
seed = 7
d = 5

[dataset]
kind = "bsc"
n_bits = 5
delta = 0.1
n_train = 100
n_test = 10

[f_net]
hidden = [32, 32]
activation = "relu"

[g_net]
hidden = [32, 32]
activation = "relu"

[train]
epochs = 20
optimizer = { kind = "gd", lr = 0.01 }

[[planes]]
axes = [1, 2]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(BSC).unwrap();
        assert_eq!(cfg.mode, Mode::Neural);
        assert_eq!(cfg.dataset, DatasetSource::Bsc { n_bits: 5, delta: 0.1, p: 0.5, n_train: 100, n_test: 10 });
        let t = cfg.train.as_ref().unwrap();
        assert_eq!(t.batch_size, BatchSize::Full);
        assert_eq!(t.loss_eps, DEFAULT_LOSS_EPS);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let m = cfg.f_net.as_ref().unwrap().mlp(5, 5, 9);
        assert_eq!(m.layer_widths, vec![5, 32, 32, 5]);
        m.validate().unwrap();
    }

    #[test]
    fn rejects_bad_documents() {
        let bad_version = BSC.replace("format_version = 1", "format_version = 2");
        assert!(ExperimentConfig::from_toml_str(&bad_version).is_err());
        let unknown = BSC.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
        let no_d = BSC.replace("d = 5\n", "");
        assert!(matches!(ExperimentConfig::from_toml_str(&no_d), Err(Error::Config(m)) if m.contains("`d`")));
        let bad_axes = BSC.replace("axes = [1, 2]", "axes = [2, 2]");
        assert!(ExperimentConfig::from_toml_str(&bad_axes).is_err());
        let zero_lr = BSC.replace("lr = 0.01", "lr = 0.0");
        assert!(ExperimentConfig::from_toml_str(&zero_lr).is_err());
    }

    #[test]
    fn classical_pmf_config() {
        let cfg = ExperimentConfig::from_toml_str(
            "format_version = 1\nmode = \"classical\"\n[dataset]\nkind = \"pmf\"\npath = \"p.csv\"\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Classical);
        let neural_pmf = "format_version = 1\nd = 2\n[dataset]\nkind = \"pmf\"\npath = \"p.csv\"\n[f_net]\nhidden=[2]\nactivation=\"tanh\"\n[g_net]\nhidden=[2]\nactivation=\"tanh\"\n[train]\nepochs=1\noptimizer={kind=\"gd\",lr=0.1}\n";
        assert!(ExperimentConfig::from_toml_str(neural_pmf).is_err());
    }

    #[test]
    fn csv_dataset_section() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
format_version = 1
mode = "classical"
[dataset]
kind = "csv"
path = "data.csv"
test_fraction = 0.2
[dataset.schema]
default_role = "ignore"
[[dataset.schema.columns]]
name = "a"
role = "x"
kind = "categorical"
"#,
        )
        .unwrap();
        match cfg.dataset {
            DatasetSource::Csv { schema, test_fraction, standardize, .. } => {
                assert_eq!(schema.columns.len(), 1);
                assert_eq!(test_fraction, 0.2);
                assert!(!standardize);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeds_are_distinct_and_derived() {
        let s = Seeds::from_base(u64::MAX);
        assert_eq!(s.data, u64::MAX);
        assert_eq!(s.split, 0);
        assert_ne!(s.f_init, s.g_init);
    }
}
