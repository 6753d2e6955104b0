//! Config-driven runs: data preparation, training, whitening, evaluation and
//! the artifacts written to an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classical_ca::{ca_decompose, contingency_from_pmf, contingency_from_samples, pics_exact, CaDecomposition};
use crate::dataset::{FeatureKind, PairedDataset};
use crate::error::{contract, Error, Result};
use crate::io::artifacts::{factors_csv, history_csv, pics_csv, sha256_hex, spectrum_csv, write_atomic, PicRow};
use crate::io::config::{DatasetSource, ExperimentConfig, Mode, NeuralSettings, Seeds};
use crate::io::csv_data::{load_csv, load_pmf_csv, Standardizer};
use crate::io::plane::{export_factor_plane, plane_to_csv, render_svg, PlaneSource};
use crate::linalg::Matrix;
use crate::neural::{evaluate_loss, train_ca_nn, Mlp, MlpDocument, TrainOutcome};
use crate::oracles::{
    bsc_joint_pmf, bsc_sample, bsc_spectrum_uniform, expand_spectrum, gaussian_pair_sample,
    gaussian_reference_values, multimodal_gaussian_sample, BscSpec, GaussianPairSpec, MAX_PMF_BITS,
};
use crate::reconstitution::{prior_from_labels, ReconstitutionModel, XFunctions};
use crate::whitening::{apply_whitening, fit_whitening, PrincipalFunctions, WhiteningTransform};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// A sampled dataset with its split and whatever ground truth is known.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: PairedDataset,
    pub x_features: Vec<String>,
    pub y_features: Vec<String>,
    /// Fitted on the training rows when standardization was requested.
    pub x_standardizer: Option<Standardizer>,
    /// Known principal correlations, descending, trivial component excluded.
    pub reference: Option<Vec<f64>>,
    /// Latent mixture mode of every sample, for mixture sources.
    pub modes: Option<Vec<u8>>,
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Samples or loads the dataset described by `cfg`. Relative paths resolve
/// against `base_dir`.
pub fn prepare_data(cfg: &ExperimentConfig, base_dir: &Path) -> Result<PreparedData> {
    let seeds = cfg.seeds();
    let d = cfg.d.unwrap_or(0);
    match &cfg.dataset {
        DatasetSource::Bsc {
            n_bits,
            delta,
            p,
            n_train,
            n_test,
        } => {
            let spec = BscSpec {
                n_bits: *n_bits,
                delta: *delta,
                p: *p,
            };
            let dataset = bsc_sample(&spec, n_train + n_test, seeds.data)?.with_leading_split(*n_train)?;
            let reference = if *p == 0.5 {
                Some(expand_spectrum(&bsc_spectrum_uniform(*n_bits, *delta)))
            } else if *n_bits <= MAX_PMF_BITS {
                Some(pics_exact(&bsc_joint_pmf(&spec)?)?.correlations)
            } else {
                None
            };
            Ok(PreparedData {
                dataset,
                x_features: numbered("x", *n_bits),
                y_features: numbered("y", *n_bits),
                x_standardizer: None,
                reference,
                modes: None,
            })
        }
        DatasetSource::Gaussian {
            sigma1,
            sigma2,
            n_train,
            n_test,
        } => {
            let dataset = gaussian_pair_sample(&GaussianPairSpec {
                sigma1: *sigma1,
                sigma2: *sigma2,
                n_samples: n_train + n_test,
                seed: seeds.data,
            })?
            .with_leading_split(*n_train)?;
            Ok(PreparedData {
                dataset,
                x_features: vec!["x".into()],
                y_features: vec!["y".into()],
                x_standardizer: None,
                reference: Some(gaussian_reference_values(*sigma1, *sigma2, d.max(1))),
                modes: None,
            })
        }
        DatasetSource::Multimodal {
            mu0,
            mu1,
            cov,
            p_mode,
            n_train,
            n_test,
        } => {
            let cov = Matrix::from_rows(&[&cov[0], &cov[1]]);
            let s = multimodal_gaussian_sample(*mu0, *mu1, &cov, *p_mode, n_train + n_test, seeds.data)?;
            Ok(PreparedData {
                dataset: s.data.with_leading_split(*n_train)?,
                x_features: vec!["x".into()],
                y_features: vec!["y".into()],
                x_standardizer: None,
                reference: None,
                modes: Some(s.modes),
            })
        }
        DatasetSource::Csv {
            path,
            schema,
            standardize,
            test_fraction,
        } => {
            let loaded = load_csv(&resolve(base_dir, path), schema)?;
            let mut dataset = loaded.dataset;
            if *test_fraction > 0.0 {
                dataset = dataset.with_random_split(*test_fraction, seeds.split)?;
            }
            let mut x_standardizer = None;
            if *standardize && dataset.x_kind == FeatureKind::Continuous {
                let train_idx: Vec<usize> = match &dataset.split {
                    Some(s) => s.train.clone(),
                    None => (0..dataset.n()).collect(),
                };
                let st = Standardizer::fit(&dataset.x, &train_idx);
                dataset.x = st.apply(&dataset.x);
                x_standardizer = Some(st);
            }
            let reference = if dataset.x_kind.is_categorical() && dataset.y_kind.is_categorical() {
                let train = dataset.train();
                let table = contingency_from_samples(&train.x_categories()?, &train.y_categories()?)?;
                Some(ca_decompose(&table)?.sigmas)
            } else {
                None
            };
            Ok(PreparedData {
                dataset,
                x_features: loaded.x_features,
                y_features: loaded.y_features,
                x_standardizer,
                reference,
                modes: None,
            })
        }
        DatasetSource::Pmf { .. } => Err(Error::Unsupported(
            "a pmf table has no samples to train on".into(),
        )),
    }
}

/// Trained encoders together with their whitening and principal functions.
#[derive(Debug, Clone)]
pub struct NeuralFit {
    pub outcome: TrainOutcome,
    pub whitening: WhiteningTransform,
    pub train: PrincipalFunctions,
    pub test: Option<PrincipalFunctions>,
}

/// Trains on the training split, fits the whitening there and applies it to
/// both splits.
pub fn fit_neural(data: &PairedDataset, settings: &NeuralSettings<'_>, seeds: &Seeds) -> Result<NeuralFit> {
    let f_cfg = settings.f_net.mlp(data.x.rows(), settings.d, seeds.f_init);
    let g_cfg = settings.g_net.mlp(data.y.rows(), settings.d, seeds.g_init);
    let t_cfg = settings.train.train_config(seeds.shuffle);
    let outcome = train_ca_nn(data, &f_cfg, &g_cfg, &t_cfg)?;
    let outputs = |part: &PairedDataset| -> Result<(Matrix, Matrix)> {
        Ok((outcome.f_net.predict(&part.x)?, outcome.g_net.predict(&part.y)?))
    };
    let (f, g) = outputs(&data.train())?;
    let whitening = fit_whitening(&f, &g, "train")?;
    let train = apply_whitening(&whitening, &f, &g)?;
    let test = match data.test() {
        Some(t) => {
            let (f, g) = outputs(&t)?;
            Some(apply_whitening(&whitening, &f, &g)?)
        }
        None => None,
    };
    Ok(NeuralFit {
        outcome,
        whitening,
        train,
        test,
    })
}

/// Per-class data needed to rebuild the likelihood classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub labels: Vec<String>,
    /// One G-Net input column per class, in label order.
    pub inputs: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
}

impl ClassInfo {
    /// Classes of a categorical y side; `None` for continuous y.
    pub fn from_training(train: &PairedDataset) -> Result<Option<Self>> {
        if !train.y_kind.is_categorical() {
            return Ok(None);
        }
        let cats = train.y_categories()?;
        let mut first: BTreeMap<&str, usize> = BTreeMap::new();
        for (k, c) in cats.iter().enumerate() {
            first.entry(c.as_str()).or_insert(k);
        }
        let labels: Vec<String> = first.keys().map(|s| s.to_string()).collect();
        let inputs = first.values().map(|&k| train.y.column(k)).collect();
        let prior = prior_from_labels(&cats, &labels)?;
        Ok(Some(Self { labels, inputs, prior }))
    }
}

/// Everything `model.json` holds: both encoders, the whitening and enough
/// metadata to evaluate or classify new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub loss_eps: f64,
    pub f_net: MlpDocument,
    pub g_net: MlpDocument,
    pub whitening: WhiteningTransform,
    /// Clamped whitened diagonal on the training split.
    pub pic_diagonal: Vec<f64>,
    pub x_kind: FeatureKind,
    pub y_kind: FeatureKind,
    pub x_features: Vec<String>,
    pub y_features: Vec<String>,
    #[serde(default)]
    pub x_standardizer: Option<Standardizer>,
    #[serde(default)]
    pub classes: Option<ClassInfo>,
}

impl ModelBundle {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format_version {}",
                b.format_version
            )));
        }
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn d(&self) -> usize {
        self.whitening.d()
    }

    pub fn nets(&self) -> Result<(Mlp, Mlp)> {
        Ok((
            Mlp::from_document(self.f_net.clone())?,
            Mlp::from_document(self.g_net.clone())?,
        ))
    }

    pub fn x_functions(&self) -> Result<XFunctions> {
        Ok(XFunctions::Network {
            net: Mlp::from_document(self.f_net.clone())?,
            a: self.whitening.a.clone(),
            mean: self.whitening.mean_f.clone(),
        })
    }

    /// Applies the stored standardizer (if any) to raw x feature columns.
    pub fn encode_x(&self, raw: &Matrix) -> Matrix {
        match &self.x_standardizer {
            Some(s) => s.apply(raw),
            None => raw.clone(),
        }
    }

    pub fn reconstitution(&self) -> Result<ReconstitutionModel> {
        let classes = self
            .classes
            .as_ref()
            .ok_or_else(|| Error::Unsupported("the model has a continuous y side and no classes".into()))?;
        let (f_net, g_net) = self.nets()?;
        let width = self.g_net.config.input_width();
        if classes.inputs.len() != classes.labels.len() || classes.inputs.iter().any(|c| c.len() != width) {
            return Err(contract(format!("class inputs must be {} columns of width {width}", classes.labels.len())));
        }
        let y_inputs = Matrix::from_columns(&classes.inputs);
        ReconstitutionModel::from_trained(
            &f_net,
            &g_net,
            &self.whitening,
            self.pic_diagonal.clone(),
            &y_inputs,
            classes.labels.clone(),
            classes.prior.clone(),
        )
    }
}

/// Scores of a stored model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub loss: f64,
    /// Diagonal of the stored whitening applied to this data (unclamped).
    pub pics: Vec<f64>,
    /// Classifier accuracy when y is categorical.
    pub accuracy: Option<f64>,
}

/// Evaluates `bundle` on already encoded data.
pub fn evaluate_model(bundle: &ModelBundle, data: &PairedDataset) -> Result<EvalReport> {
    let (f_net, g_net) = bundle.nets()?;
    let loss = evaluate_loss(&f_net, &g_net, data, bundle.loss_eps)?.loss;
    let pf = apply_whitening(&bundle.whitening, &f_net.predict(&data.x)?, &g_net.predict(&data.y)?)?;
    let accuracy = match &bundle.classes {
        Some(_) => {
            let model = bundle.reconstitution()?;
            let truth = data.y_categories()?;
            let predicted = model.classify_batch(&data.x)?;
            let hits = predicted.iter().zip(&truth).filter(|(p, t)| &p.label == *t).count();
            Some(hits as f64 / data.n() as f64)
        }
        None => None,
    };
    Ok(EvalReport {
        n: data.n(),
        loss,
        pics: pf.raw_diagonal,
        accuracy,
    })
}

/// Points on the `(i, j)` plane (zero-based) traced by the x-side functions
/// along the straight line from `start` to `end` in input space.
/// Coordinates are scaled by `weights`, matching the factor planes.
#[allow(clippy::too_many_arguments)]
pub fn interpolate_path(
    f: &XFunctions,
    weights: &[f64],
    x_kind: &FeatureKind,
    start: &[f64],
    end: &[f64],
    steps: usize,
    i: usize,
    j: usize,
) -> Result<Vec<[f64; 2]>> {
    if x_kind.is_categorical() {
        return Err(Error::Unsupported(
            "interpolation needs continuous x features".into(),
        ));
    }
    if steps < 2 {
        return Err(contract("an interpolation path needs at least 2 steps"));
    }
    if start.len() != f.input_width() || end.len() != f.input_width() {
        return Err(contract(format!(
            "endpoints must have {} features",
            f.input_width()
        )));
    }
    let d = f.d();
    for idx in [i, j] {
        if idx >= d {
            return Err(Error::IndexOutOfRange {
                what: "component",
                index: idx,
                len: d,
            });
        }
    }
    if weights.len() != d {
        return Err(contract("one weight per component is required"));
    }
    let m = start.len();
    let x = Matrix::from_fn(m, steps, |r, k| {
        let t = k as f64 / (steps - 1) as f64;
        start[r] + t * (end[r] - start[r])
    });
    let v = f.eval(&x)?;
    Ok((0..steps)
        .map(|k| [v[(i, k)] * weights[i], v[(j, k)] * weights[j]])
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub output_dir: Option<PathBuf>,
    /// Overrides the config's base seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: Option<String>,
    pub mode: Mode,
    pub config_sha256: String,
    pub seeds: Seeds,
    /// File name to SHA-256 of its content.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    /// Clamped whitened diagonal on train (neural) or classical σ.
    pub train_pics: Vec<f64>,
    pub test_pics: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

struct Writer {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn planes(&mut self, src: &PlaneSource, requests: &[crate::io::config::PlaneRequest]) -> Result<()> {
        for req in requests {
            let [a, b] = req.axes;
            let plane = export_factor_plane(src, a - 1, b - 1)?;
            self.put(&format!("plane_{a}_{b}.svg"), render_svg(&plane).as_bytes())?;
            self.put(&format!("plane_{a}_{b}.csv"), plane_to_csv(&plane)?.as_bytes())?;
        }
        Ok(())
    }
}

/// Loads a config, runs it and writes every artifact into the output
/// directory. Identical configs and seeds give byte-identical files.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let bytes = std::fs::read(config_path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let base_dir = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let output_dir = match (&opts.output_dir, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(&base_dir, o),
        (None, None) => base_dir.join("ca_output"),
    };
    run_config(&cfg, &sha256_hex(&bytes), &base_dir, &output_dir)
}

/// As [`run_experiment`] for an in-memory config.
pub fn run_config(cfg: &ExperimentConfig, config_sha256: &str, base_dir: &Path, output_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let mut w = Writer {
        dir: output_dir.to_path_buf(),
        files: BTreeMap::new(),
    };
    let mut report = match cfg.mode {
        Mode::Neural => run_neural(cfg, config_sha256, base_dir, &mut w)?,
        Mode::Classical => run_classical(cfg, base_dir, &mut w)?,
    };
    let manifest = Manifest {
        name: cfg.name.clone(),
        mode: cfg.mode,
        config_sha256: config_sha256.to_string(),
        seeds: cfg.seeds(),
        files: w.files.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    write_atomic(&output_dir.join("manifest.json"), format!("{json}\n").as_bytes())?;
    report.manifest = manifest;
    report.output_dir = output_dir.to_path_buf();
    Ok(report)
}

/// Per-sample labels for plane points. Continuous x points borrow the y
/// category when there is one.
fn plane_labels(ds: &PairedDataset) -> Result<(Vec<String>, bool, Vec<String>, bool)> {
    let blank = vec![String::new(); ds.n()];
    let (y, gy) = if ds.y_kind.is_categorical() {
        (ds.y_categories()?, true)
    } else {
        (blank.clone(), false)
    };
    let (x, gx) = if ds.x_kind.is_categorical() {
        (ds.x_categories()?, true)
    } else if gy {
        (y.clone(), false)
    } else {
        (blank, false)
    };
    Ok((x, gx, y, gy))
}

/// Factor table rows: one per category when categorical, else one per
/// sample labelled by its 1-based index.
fn factor_table(values: &Matrix, kind: &FeatureKind, labels: impl FnOnce() -> Result<Vec<String>>) -> Result<String> {
    if !kind.is_categorical() {
        return factors_csv(&numbered("", values.cols()), values);
    }
    let labels = labels()?;
    let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (k, l) in labels.iter().enumerate() {
        let e = acc.entry(l.as_str()).or_insert((vec![0.0; values.rows()], 0));
        for (i, s) in e.0.iter_mut().enumerate() {
            *s += values[(i, k)];
        }
        e.1 += 1;
    }
    let names: Vec<String> = acc.keys().map(|s| s.to_string()).collect();
    let cols: Vec<Vec<f64>> = acc
        .into_values()
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    factors_csv(&names, &Matrix::from_columns(&cols))
}

fn run_neural(cfg: &ExperimentConfig, config_sha256: &str, base_dir: &Path, w: &mut Writer) -> Result<RunReport> {
    let settings = cfg.neural()?;
    let seeds = cfg.seeds();
    let prep = prepare_data(cfg, base_dir)?;
    let fit = fit_neural(&prep.dataset, &settings, &seeds)?;
    let train = prep.dataset.train();
    let d = settings.d;

    let bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        config_sha256: config_sha256.to_string(),
        seeds,
        loss_eps: settings.train.loss_eps,
        f_net: fit.outcome.f_net.to_document(),
        g_net: fit.outcome.g_net.to_document(),
        whitening: fit.whitening.clone(),
        pic_diagonal: fit.train.pic_diagonal.clone(),
        x_kind: prep.dataset.x_kind.clone(),
        y_kind: prep.dataset.y_kind.clone(),
        x_features: prep.x_features.clone(),
        y_features: prep.y_features.clone(),
        x_standardizer: prep.x_standardizer.clone(),
        classes: ClassInfo::from_training(&train)?,
    };
    w.put("model.json", format!("{}\n", bundle.to_json()?).as_bytes())?;

    let rows: Vec<PicRow> = (0..d)
        .map(|i| PicRow {
            component: i,
            train_raw: fit.train.raw_diagonal[i],
            train_clamped: fit.train.pic_diagonal[i],
            test_raw: fit.test.as_ref().map(|t| t.raw_diagonal[i]),
            test_clamped: fit.test.as_ref().map(|t| t.pic_diagonal[i]),
            reference: prep.reference.as_ref().and_then(|r| r.get(i).copied()),
        })
        .collect();
    w.put("pics.csv", pics_csv(&rows)?.as_bytes())?;
    w.put(
        "factors_x.csv",
        factor_table(&fit.train.f, &train.x_kind, || train.x_categories())?.as_bytes(),
    )?;
    w.put(
        "factors_y.csv",
        factor_table(&fit.train.g, &train.y_kind, || train.y_categories())?.as_bytes(),
    )?;
    w.put("history.csv", history_csv(&fit.outcome.history)?.as_bytes())?;

    if !cfg.planes.is_empty() {
        let (xl, gx, yl, gy) = plane_labels(&train)?;
        let src = PlaneSource::from_principal_functions(&fit.train, &xl, &yl, gx, gy)?;
        w.planes(&src, &cfg.planes)?;
    }

    Ok(RunReport {
        output_dir: PathBuf::new(),
        manifest: empty_manifest(),
        train_pics: fit.train.pic_diagonal.clone(),
        test_pics: fit.test.map(|t| t.pic_diagonal),
        reference: prep.reference,
        initial_loss: Some(fit.outcome.initial_loss),
        final_loss: Some(fit.outcome.final_loss),
    })
}

/// Plane points of a stored model on `data`, with the labelling used by
/// training runs.
pub fn model_plane_source(bundle: &ModelBundle, data: &PairedDataset) -> Result<PlaneSource> {
    let (f_net, g_net) = bundle.nets()?;
    let pf = apply_whitening(&bundle.whitening, &f_net.predict(&data.x)?, &g_net.predict(&data.y)?)?;
    let (xl, gx, yl, gy) = plane_labels(data)?;
    PlaneSource::from_principal_functions(&pf, &xl, &yl, gx, gy)
}

fn empty_manifest() -> Manifest {
    Manifest {
        name: None,
        mode: Mode::Neural,
        config_sha256: String::new(),
        seeds: Seeds::from_base(0),
        files: BTreeMap::new(),
    }
}

/// Classical CA of the configured table: a pmf file, or the training
/// split of a categorical dataset.
pub fn classical_decomposition(cfg: &ExperimentConfig, base_dir: &Path) -> Result<CaDecomposition> {
    let table = match &cfg.dataset {
        DatasetSource::Pmf { path } => contingency_from_pmf(&load_pmf_csv(&resolve(base_dir, path))?)?,
        _ => {
            let prep = prepare_data(cfg, base_dir)?;
            let train = prep.dataset.train();
            if !(train.x_kind.is_categorical() && train.y_kind.is_categorical()) {
                return Err(Error::Unsupported(
                    "classical CA needs categorical x and y".into(),
                ));
            }
            contingency_from_samples(&train.x_categories()?, &train.y_categories()?)?
        }
    };
    ca_decompose(&table)
}

fn run_classical(cfg: &ExperimentConfig, base_dir: &Path, w: &mut Writer) -> Result<RunReport> {
    let ca = classical_decomposition(cfg, base_dir)?;
    w.put("spectrum.csv", spectrum_csv(&ca.sigmas, &ca.score_ratios)?.as_bytes())?;
    w.put("factors_x.csv", factors_csv(&ca.x_labels, &ca.l_factors.transpose())?.as_bytes())?;
    w.put("factors_y.csv", factors_csv(&ca.y_labels, &ca.r_factors.transpose())?.as_bytes())?;
    w.planes(&PlaneSource::from_ca(&ca), &cfg.planes)?;
    Ok(RunReport {
        output_dir: PathBuf::new(),
        manifest: empty_manifest(),
        train_pics: ca.sigmas,
        test_pics: None,
        reference: None,
        initial_loss: None,
        final_loss: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL_BSC: &str = r#"
format_version = 1
seed = 11
d = 3
planes = [{ axes = [1, 2] }]

[dataset]
kind = "bsc"
n_bits = 2
delta = 0.1
n_train = 400
n_test = 100

[f_net]
hidden = [8]
activation = "tanh"

[g_net]
hidden = [8]
activation = "tanh"

[train]
epochs = 200
optimizer = { kind = "adam", lr = 0.01 }
"#;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("exp.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn neural_run_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL_BSC);
        let a = run_experiment(&cfg, &RunOptions { output_dir: Some(dir.path().join("a")), seed: None }).unwrap();
        let b = run_experiment(&cfg, &RunOptions { output_dir: Some(dir.path().join("b")), seed: None }).unwrap();
        assert_eq!(a.manifest.files, b.manifest.files);
        for name in ["model.json", "pics.csv", "factors_x.csv", "factors_y.csv", "history.csv", "plane_1_2.svg", "plane_1_2.csv"] {
            assert!(a.manifest.files.contains_key(name), "{name} missing");
            assert_eq!(
                std::fs::read(a.output_dir.join(name)).unwrap(),
                std::fs::read(b.output_dir.join(name)).unwrap()
            );
        }
        assert!(a.final_loss.unwrap() <= a.initial_loss.unwrap());
        // Two bits at δ = 0.1: both leading correlations are 0.8.
        for s in &a.train_pics[..2] {
            assert!((s - 0.8).abs() < 0.1, "{:?}", a.train_pics);
        }
        let c = run_experiment(&cfg, &RunOptions { output_dir: Some(dir.path().join("c")), seed: Some(12) }).unwrap();
        assert_ne!(a.manifest.files["model.json"], c.manifest.files["model.json"]);
    }

    #[test]
    fn bundle_round_trip_and_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL_BSC);
        let r = run_experiment(&cfg, &RunOptions { output_dir: Some(dir.path().join("o")), seed: None }).unwrap();
        let bundle = ModelBundle::load(&r.output_dir.join("model.json")).unwrap();
        assert_eq!(ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap(), bundle);
        let parsed = ExperimentConfig::from_toml_str(SMALL_BSC).unwrap();
        let prep = prepare_data(&parsed, dir.path()).unwrap();
        let report = evaluate_model(&bundle, &prep.dataset.train()).unwrap();
        for (a, b) in report.pics.iter().zip(&bundle.pic_diagonal) {
            assert!((a - b).abs() < 1e-9);
        }
        // Two-bit BSC: the Bayes decision is y = x, correct with probability 0.81.
        let acc = report.accuracy.unwrap();
        assert!(acc > 0.7, "accuracy {acc}");
    }

    #[test]
    fn classical_run_from_pmf() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.csv"), "x,u,v,w\na,0.2,0.05,0.05\nb,0.05,0.3,0.05\nc,0.05,0.05,0.2\n").unwrap();
        let cfg = write_config(
            dir.path(),
            "format_version = 1\nmode = \"classical\"\noutput_dir = \"out\"\nplanes = [{ axes = [1, 2] }]\n[dataset]\nkind = \"pmf\"\npath = \"p.csv\"\n",
        );
        let r = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(r.output_dir, dir.path().join("out"));
        assert_eq!(r.train_pics.len(), 2);
        let spectrum = std::fs::read_to_string(r.output_dir.join("spectrum.csv")).unwrap();
        assert!(spectrum.starts_with("component,sigma,inertia,score_ratio\n1,"));
        assert!(r.output_dir.join("plane_1_2.svg").exists());
        assert!(r.output_dir.join("manifest.json").exists());
    }

    #[test]
    fn interpolation_contract() {
        let net = Mlp::init(crate::neural::MlpConfig::uniform(vec![2, 4, 3], crate::neural::Activation::Tanh, 1)).unwrap();
        let f = XFunctions::Network {
            net,
            a: Matrix::identity(3),
            mean: vec![0.0; 3],
        };
        let w = [1.0, 0.5, 0.25];
        let path = interpolate_path(&f, &w, &FeatureKind::Continuous, &[0.0, 0.0], &[1.0, 1.0], 5, 0, 2).unwrap();
        assert_eq!(path.len(), 5);
        let start = f.eval(&Matrix::zeros(2, 1)).unwrap();
        assert!((path[0][1] - 0.25 * start[(2, 0)]).abs() < 1e-15);
        let ends = interpolate_path(&f, &w, &FeatureKind::Continuous, &[0.0, 0.0], &[1.0, 1.0], 2, 0, 2).unwrap();
        assert_eq!(ends, vec![path[0], path[4]]);
        let still = interpolate_path(&f, &w, &FeatureKind::Continuous, &[0.3, -1.0], &[0.3, -1.0], 4, 0, 1).unwrap();
        assert!(still.iter().all(|p| *p == still[0]));
        assert!(matches!(
            interpolate_path(&f, &w, &FeatureKind::Binary, &[0.0, 0.0], &[1.0, 1.0], 5, 0, 1),
            Err(Error::Unsupported(_))
        ));
        assert!(interpolate_path(&f, &w, &FeatureKind::Continuous, &[0.0, 0.0], &[1.0, 1.0], 1, 0, 1).is_err());
        assert!(interpolate_path(&f, &w, &FeatureKind::Continuous, &[0.0, 0.0], &[1.0, 1.0], 3, 0, 3).is_err());
    }
}
