//! Command-line interface.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or configuration
//! error, 3 data integrity error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, generate_synthetic, generate_teacher_labeled, insurance_names, windowize};
use crate::error::{Error, Result};
use crate::experiment::{filter_curve, prepare_split, run_comparison, run_robustness, RunConfig};
use crate::features::{BaselineParams, FeatureSample, FeatureSubset, LogisticModel, MlpModel};
use crate::network::{compare_interpretations, NetworkParams, WindowSample};
use crate::training::{
    check_gradient_fn, gradient_check, train, GradCheckReport, ModelKind, ParamGroup, TrainedModel, TrainingLog,
};

/// Gradient checks pass at or below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "intnn", version, about = "Interpretable panel-data networks built on persistent change filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a payment panel and write it as CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Network parameter file; labels are drawn from its predictions.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Overrides `data_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model on a balanced split of the windows.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelChoice::Intnn)]
        model: ModelChoice,
        /// Feature subset for baselines, e.g. "npc,ic,pc".
        #[arg(long, default_value = "npc,ic,pc")]
        features: FeatureSubset,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics CSV. Defaults to `<out>.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score a saved model on every labeled window of a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the network and all baselines, print the comparison table.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the threshold, partitions and head of a network parameter file.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated input names. Defaults to the insurance names.
        #[arg(long)]
        names: Option<String>,
        /// Logistic baseline on NPC features to compare signs against.
        #[arg(long)]
        logistic: Option<PathBuf>,
    },
    /// Filter values at the end of step series, one row per (t0, k).
    FilterDemo {
        #[arg(long, value_enum, default_value_t = DemoMode::Example1)]
        mode: DemoMode,
        #[arg(long = "T", default_value_t = 1000)]
        t_len: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1")]
        k: Vec<f64>,
        /// Share of post-step entries set to 0.9 (example2 only).
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 50)]
        t0_step: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradKind::Network)]
        model_kind: GradKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 2)]
        channels: usize,
    },
    /// Rerun the comparison after zeroing a share of payments.
    Robustness {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Intnn,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoMode {
    /// Clean step series.
    Example1,
    /// Step series with a share of post-step entries set to 0.9.
    Example2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradKind {
    Network,
    Logistic,
    Mlp,
    Quadratic,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Integrity(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Messages go to `out` and errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command. Returns 1 when a gradient check fails.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Generate { config, out: path, teacher, seed } => {
            let mut run = RunConfig::load_or_default(config.as_deref())?;
            if let Some(seed) = seed {
                run.generator.seed = seed;
            }
            let dataset = match teacher {
                Some(t) => generate_teacher_labeled(&run.generator, &load_network(&t)?)?,
                None => generate_synthetic(&run.generator)?,
            };
            data::save_csv(&dataset, &path)?;
            emit(out, &format!("wrote {} records to {}", dataset.len(), path.display()))?;
        }
        Command::Train { data: data_path, model, features, config, out: path, metrics } => {
            let run = RunConfig::load_or_default(config.as_deref())?;
            let split = prepare_split(&data::load_csv(&data_path)?, &run.experiment)?;
            let kind = match model {
                ModelChoice::Intnn => ModelKind::Network { channels: run.experiment.channels },
                ModelChoice::Logistic => ModelKind::Logistic(features),
                ModelChoice::Mlp => ModelKind::Mlp { subset: features, hidden: run.experiment.mlp_hidden },
            };
            let (trained, log) = train(kind, &split, &run.train)?;
            write_file(&path, &trained.to_text())?;
            let metrics_path = metrics.unwrap_or_else(|| with_suffix(&path, ".metrics.csv"));
            write_file(&metrics_path, &metrics_csv(&log))?;
            let test = trained.evaluate(&split.test)?;
            emit(out, &format!("test accuracy {:.4} on {} windows", test.accuracy, test.n))?;
        }
        Command::Evaluate { data: data_path, model, config } => {
            let run = RunConfig::load_or_default(config.as_deref())?;
            let trained = TrainedModel::from_text(&read_file(&model)?)?;
            let s = match &trained {
                TrainedModel::Network(p) => p.s,
                TrainedModel::Baseline(_) => run.experiment.s,
            };
            let windows = windowize(&data::load_csv(&data_path)?, s)?;
            let m = trained.evaluate(&windows)?;
            emit(
                out,
                &format!(
                    "n = {}\naccuracy = {:.6}\nmean_loss = {:.6}\nconfusion (rows actual 0/1, cols predicted 0/1) = [[{}, {}], [{}, {}]]",
                    m.n, m.accuracy, m.mean_loss, m.confusion[0][0], m.confusion[0][1], m.confusion[1][0], m.confusion[1][1]
                ),
            )?;
        }
        Command::Compare { data: data_path, config, out: path } => {
            let run = RunConfig::load_or_default(config.as_deref())?;
            let split = prepare_split(&data::load_csv(&data_path)?, &run.experiment)?;
            let table = run_comparison(&split, &run.train, &run.experiment)?.table()?;
            if let Some(p) = path {
                write_file(&p, &table)?;
            }
            emit(out, table.trim_end())?;
        }
        Command::Interpret { model, names, logistic } => {
            let params = load_network(&model)?;
            let names = match names {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => insurance_names(params.m),
            };
            let mut text = params.interpret(&names)?.to_string();
            if let Some(path) = logistic {
                let baseline = match TrainedModel::from_text(&read_file(&path)?)? {
                    TrainedModel::Baseline(b) => b,
                    TrainedModel::Network(_) => {
                        return Err(Error::Config(format!("{} is not a baseline model file", path.display())))
                    }
                };
                let coefs = npc_coefficients(&baseline, &names)?;
                text.push('\n');
                text.push_str(&compare_interpretations(&params, &names, &coefs)?.to_string());
            }
            emit(out, text.trim_end())?;
        }
        Command::FilterDemo { mode, t_len, k, noise, t0_step, seed, out: path } => {
            if t0_step == 0 {
                return Err(Error::Config("t0-step must be positive".into()));
            }
            let t0s: Vec<usize> = (0..=t_len).step_by(t0_step).collect();
            let noise = if mode == DemoMode::Example1 { 0.0 } else { noise };
            let points = filter_curve(t_len, &t0s, &k, noise, seed)?;
            let mut csv = String::from("t0,k,value\n");
            for p in &points {
                csv.push_str(&format!("{},{},{}\n", p.t0, p.k, p.value));
            }
            match path {
                Some(p) => write_file(&p, &csv)?,
                None => emit(out, csv.trim_end())?,
            }
        }
        Command::Gradcheck { model_kind, seed, lambda, channels } => {
            let report = run_gradcheck(model_kind, seed, lambda, channels)?;
            let pass = report.passes(GRADCHECK_TOLERANCE);
            emit(out, &format!("{report}\n{}", if pass { "PASS" } else { "FAIL" }))?;
            return Ok(if pass { 0 } else { 1 });
        }
        Command::Robustness { data: data_path, rate, config, out: dir } => {
            let run = RunConfig::load_or_default(config.as_deref())?;
            let dataset = data::load_csv(&data_path)?;
            let result = run_robustness(&dataset, rate, &run)?;
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let clean = result.clean.table()?;
            let corrupt = result.corrupt.table()?;
            let diff = result.parameter_diff(&dataset.insurance_names);
            write_file(&dir.join("clean.txt"), &clean)?;
            write_file(&dir.join("corrupted.txt"), &corrupt)?;
            write_file(&dir.join("parameters.txt"), &diff)?;
            let mut text = format!("clean data\n{clean}\ncorrupted data (rate {rate})\n{corrupt}\n{diff}");
            if let Some((a, b)) = result.smoothing() {
                text.push_str(&format!("k clean = {a:.6}, k corrupted = {b:.6}\n"));
            }
            emit(out, text.trim_end())?;
        }
    }
    Ok(0)
}

/// Runs a seeded finite-difference check for one model family.
pub fn run_gradcheck(kind: GradKind, seed: u64, lambda: f64, channels: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-4;
    match kind {
        GradKind::Quadratic => {
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(0.5..2.0)).collect();
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grad: Vec<f64> = a.iter().zip(&x).map(|(a, x)| 2.0 * a * x).collect();
            let f = |t: &[f64]| a.iter().zip(t).map(|(a, t)| a * t * t).sum::<f64>();
            check_gradient_fn(f, &x, &grad, &[ParamGroup::new("x", (0..6).collect())], step)
        }
        GradKind::Network => {
            if channels == 0 {
                return Err(Error::Config("channels must be positive".into()));
            }
            let (m, s) = (7, 6);
            let params = NetworkParams::init(m, s, channels, &mut rng);
            let batch = random_windows(m, s, 16, &mut rng)?;
            gradient_check(&params, &batch, lambda, step)
        }
        GradKind::Logistic | GradKind::Mlp => {
            let batch: Vec<FeatureSample> = (0..16)
                .map(|_| FeatureSample {
                    x: (0..9).map(|_| rng.gen_range(0.0..4.0)).collect(),
                    label: rng.gen_range(0..2),
                })
                .collect();
            if kind == GradKind::Logistic {
                let model = LogisticModel {
                    weights: (0..9).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    intercept: rng.gen_range(-0.5..0.5),
                };
                gradient_check(&model, &batch, lambda, step)
            } else {
                let model = MlpModel::init(9, 8, &mut rng);
                gradient_check(&model, &batch, lambda, step)
            }
        }
    }
}

fn random_windows(m: usize, s: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<WindowSample>> {
    (0..n)
        .map(|_| {
            let flat = (0..m * s).map(|_| rng.gen_range(0.0..3.0)).collect();
            WindowSample::from_flat(m, s, flat, rng.gen_range(0..2))
        })
        .collect()
}

/// NPC coefficients relabeled with the input names, matched by column position.
fn npc_coefficients(baseline: &BaselineParams, names: &[String]) -> Result<Vec<(String, f64)>> {
    if baseline.kind_name() != "logistic" || baseline.subset != FeatureSubset::Npc {
        return Err(Error::Config("sign comparison needs a logistic model on NPC features".into()));
    }
    let coefs = baseline
        .named_coefficients()
        .ok_or_else(|| Error::Config("baseline has no coefficients".into()))?;
    if coefs.len() != names.len() {
        return Err(Error::Config(format!(
            "logistic model has {} coefficients for {} names",
            coefs.len(),
            names.len()
        )));
    }
    Ok(names.iter().cloned().zip(coefs.into_iter().map(|(_, c)| c)).collect())
}

/// `epoch,train_loss,train_acc,test_acc`, one row per completed epoch after
/// an epoch-0 row holding the initial loss.
pub fn metrics_csv(log: &TrainingLog) -> String {
    let mut csv = format!("epoch,train_loss,train_acc,test_acc\n0,{},,\n", log.initial_loss);
    for r in &log.epochs {
        let test = r.test.as_ref().map_or(String::new(), |t| t.accuracy.to_string());
        csv.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.train.accuracy, test));
    }
    csv
}

fn load_network(path: &Path) -> Result<NetworkParams> {
    NetworkParams::from_text(&read_file(path)?)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}
