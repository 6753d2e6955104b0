//! `ca`: classical and neural correspondence analysis from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cann::classical_ca::{ca_decompose, contingency_from_pmf};
use cann::experiment::{
    classical_decomposition, evaluate_model, interpolate_path, model_plane_source, prepare_data, run_experiment,
    ModelBundle, RunOptions,
};
use cann::io::artifacts::{factors_csv, paired_csv, spectrum_csv, write_atomic};
use cann::io::config::{ExperimentConfig, Mode};
use cann::io::csv_data::load_pmf_csv;
use cann::io::plane::{export_factor_plane, plane_to_csv, render_svg, PlaneSource};
use cann::oracles::{
    bsc_sample, bsc_spectrum_uniform, gaussian_pair_sample, gaussian_reference_values, hermite_inner_products_mc,
    BscSpec, GaussianPairSpec,
};
use cann::Matrix;

#[derive(Parser)]
#[command(name = "ca", version, about = "Correspondence analysis by SVD and by trained encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical CA of a joint pmf table (`x,<y labels>` header).
    Svd {
        pmf: PathBuf,
        /// Also write spectrum and factor tables here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment config and write its artifacts.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "CA_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Score a trained model on the data of a config.
    Eval {
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
    },
    /// Draw the factor plane of two components.
    Plane {
        config: PathBuf,
        /// One-based component numbers.
        #[arg(long, num_args = 2, value_names = ["I", "J"], default_values_t = [1, 2])]
        axes: Vec<usize>,
        /// Trained model; required for neural configs.
        #[arg(long)]
        model: Option<PathBuf>,
        /// SVG destination; a `.csv` with the same stem is written beside it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Analytic references and synthetic samples.
    #[command(subcommand)]
    Oracle(Oracle),
    /// Trace the x-side functions along a line between two inputs.
    Interpolate(InterpolateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Oracle {
    /// Principal correlations of a uniform-input binary symmetric channel.
    Bsc {
        #[arg(long)]
        n_bits: usize,
        #[arg(long)]
        delta: f64,
    },
    /// Hermite correlations of the additive Gaussian pair.
    Gaussian {
        #[arg(long, default_value_t = 1.0)]
        sigma1: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Add a Monte-Carlo column with this many samples.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write BSC samples as CSV.
    SampleBsc {
        #[arg(long)]
        n_bits: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write Gaussian pair samples as CSV.
    SampleGaussian {
        #[arg(long, default_value_t = 1.0)]
        sigma1: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct InterpolateArgs {
    model: PathBuf,
    /// Comma-separated raw x features of the start point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    from: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    to: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, num_args = 2, value_names = ["I", "J"], default_values_t = [1, 2])]
    axes: Vec<usize>,
    /// Draw the path on the plane of this config's training data.
    #[arg(long, requires = "svg")]
    config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    svg: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Svd { pmf, output } => svd(&pmf, output.as_deref()),
        Command::Train { config, seed, output } => {
            let report = run_experiment(&config, &RunOptions { output_dir: output, seed })
                .with_context(|| format!("running {}", config.display()))?;
            println!("output: {}", report.output_dir.display());
            if let (Some(a), Some(b)) = (report.initial_loss, report.final_loss) {
                println!("loss: initial {a} final {b}");
            }
            println!("train: {}", join(&report.train_pics));
            if let Some(t) = &report.test_pics {
                println!("test: {}", join(t));
            }
            if let Some(r) = &report.reference {
                println!("reference: {}", join(&r[..r.len().min(report.train_pics.len())]));
            }
            Ok(())
        }
        Command::Eval { model, config, split } => eval(&model, &config, split),
        Command::Plane {
            config,
            axes,
            model,
            output,
        } => plane(&config, [axes[0], axes[1]], model.as_deref(), &output),
        Command::Oracle(o) => oracle(o),
        Command::Interpolate(args) => interpolate(args),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn config_dir(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

fn svd(pmf: &Path, output: Option<&Path>) -> Result<()> {
    let table = load_pmf_csv(pmf).with_context(|| format!("reading {}", pmf.display()))?;
    let ca = ca_decompose(&contingency_from_pmf(&table)?)?;
    let spectrum = spectrum_csv(&ca.sigmas, &ca.score_ratios)?;
    print!("{spectrum}");
    if let Some(dir) = output {
        write_atomic(&dir.join("spectrum.csv"), spectrum.as_bytes())?;
        write_atomic(&dir.join("factors_x.csv"), factors_csv(&ca.x_labels, &ca.l_factors.transpose())?.as_bytes())?;
        write_atomic(&dir.join("factors_y.csv"), factors_csv(&ca.y_labels, &ca.r_factors.transpose())?.as_bytes())?;
    }
    Ok(())
}

fn eval(model: &Path, config: &Path, split: SplitChoice) -> Result<()> {
    let bundle = ModelBundle::load(model).with_context(|| format!("loading {}", model.display()))?;
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let prep = prepare_data(&cfg, &config_dir(config))?;
    let data = match split {
        SplitChoice::Train => prep.dataset.train(),
        SplitChoice::Test => match prep.dataset.test() {
            Some(t) => t,
            None => bail!("the config defines no test split"),
        },
        SplitChoice::All => prep.dataset.clone(),
    };
    let report = evaluate_model(&bundle, &data)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn write_plane(src: &PlaneSource, axes: [usize; 2], path_points: Vec<[f64; 2]>, output: &Path) -> Result<()> {
    if axes[0] == 0 || axes[1] == 0 {
        bail!("axes are one-based");
    }
    let mut plane = export_factor_plane(src, axes[0] - 1, axes[1] - 1)?;
    plane.path = path_points;
    write_atomic(output, render_svg(&plane).as_bytes())?;
    write_atomic(&output.with_extension("csv"), plane_to_csv(&plane)?.as_bytes())?;
    println!("wrote {}", output.display());
    Ok(())
}

fn neural_source(cfg_path: &Path, model: Option<&Path>) -> Result<(ModelBundle, PlaneSource)> {
    let Some(model) = model else {
        bail!("a neural config needs --model");
    };
    let bundle = ModelBundle::load(model)?;
    let cfg = ExperimentConfig::load(cfg_path)?;
    let prep = prepare_data(&cfg, &config_dir(cfg_path))?;
    let src = model_plane_source(&bundle, &prep.dataset.train())?;
    Ok((bundle, src))
}

fn plane(config: &Path, axes: [usize; 2], model: Option<&Path>, output: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let src = match cfg.mode {
        Mode::Classical => PlaneSource::from_ca(&classical_decomposition(&cfg, &config_dir(config))?),
        Mode::Neural => neural_source(config, model)?.1,
    };
    write_plane(&src, axes, Vec::new(), output)
}

fn oracle(o: Oracle) -> Result<()> {
    match o {
        Oracle::Bsc { n_bits, delta } => {
            println!("sigma,multiplicity");
            for (v, m) in bsc_spectrum_uniform(n_bits, delta) {
                println!("{v},{m}");
            }
        }
        Oracle::Gaussian {
            sigma1,
            sigma2,
            k,
            mc,
            seed,
        } => {
            let exact = gaussian_reference_values(sigma1, sigma2, k);
            let est = mc.map(|n| hermite_inner_products_mc(sigma1, sigma2, k, n, seed));
            println!("{}", if est.is_some() { "degree,closed_form,monte_carlo" } else { "degree,closed_form" });
            for (i, v) in exact.iter().enumerate() {
                match &est {
                    Some(e) => println!("{},{v},{}", i + 1, e[i]),
                    None => println!("{},{v}", i + 1),
                }
            }
        }
        Oracle::SampleBsc {
            n_bits,
            delta,
            p,
            n,
            seed,
            output,
        } => {
            let ds = bsc_sample(&BscSpec { n_bits, delta, p }, n, seed)?;
            let names = |c: &str| (1..=n_bits).map(|i| format!("{c}{i}")).collect::<Vec<_>>();
            write_atomic(&output, paired_csv(&names("x"), &names("y"), &ds.x, &ds.y)?.as_bytes())?;
        }
        Oracle::SampleGaussian {
            sigma1,
            sigma2,
            n,
            seed,
            output,
        } => {
            let ds = gaussian_pair_sample(&GaussianPairSpec {
                sigma1,
                sigma2,
                n_samples: n,
                seed,
            })?;
            write_atomic(&output, paired_csv(&["x".into()], &["y".into()], &ds.x, &ds.y)?.as_bytes())?;
        }
    }
    Ok(())
}

fn interpolate(args: InterpolateArgs) -> Result<()> {
    let bundle = ModelBundle::load(&args.model)?;
    let [a, b] = [args.axes[0], args.axes[1]];
    if a == 0 || b == 0 {
        bail!("axes are one-based");
    }
    let encode = |v: &[f64]| -> Result<Vec<f64>> {
        let m = Matrix::new(v.len(), 1, v.to_vec())?;
        Ok(bundle.encode_x(&m).column(0))
    };
    if args.from.len() != bundle.x_features.len() || args.to.len() != bundle.x_features.len() {
        bail!("endpoints need {} values ({})", bundle.x_features.len(), bundle.x_features.join(","));
    }
    let path = interpolate_path(
        &bundle.x_functions()?,
        &bundle.pic_diagonal,
        &bundle.x_kind,
        &encode(&args.from)?,
        &encode(&args.to)?,
        args.steps,
        a - 1,
        b - 1,
    )?;
    println!("step,first,second");
    for (k, p) in path.iter().enumerate() {
        println!("{k},{},{}", p[0], p[1]);
    }
    if let (Some(cfg), Some(svg)) = (args.config, args.svg) {
        let (_, src) = neural_source(&cfg, Some(&args.model))?;
        write_plane(&src, [a, b], path, &svg)?;
    }
    Ok(())
}
