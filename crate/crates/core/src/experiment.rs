//! End-to-end pipelines: model comparison, missing-data robustness, and the
//! filter demonstration curves.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValueDoc;
use crate::data::{self, corrupt_missing, windowize, GeneratorConfig, PanelDataset};
use crate::error::{Error, Result};
use crate::features::{comparison_table, BaselineParams, ComparisonRow, FeatureSubset, MLP_HIDDEN};
use crate::filters::{accumulate, SmoothingParam};
use crate::network::{ChannelParams, NetworkParams, WindowSample};
use crate::training::{train, ModelKind, Split, TrainConfig, TrainedModel};

/// Pipeline settings beyond the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Lag periods per window.
    pub s: usize,
    /// Samples drawn per class; half train, half test.
    pub n_per_class: usize,
    pub channels: usize,
    pub mlp_hidden: usize,
    pub split_seed: u64,
    pub corrupt_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            s: 6,
            n_per_class: 2000,
            channels: 1,
            mlp_hidden: MLP_HIDDEN,
            split_seed: 0,
            corrupt_seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] =
        &["s", "n_per_class", "channels", "mlp_hidden", "split_seed", "corrupt_seed"];

    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            s: doc.get("s")?.unwrap_or(d.s),
            n_per_class: doc.get("n_per_class")?.unwrap_or(d.n_per_class),
            channels: doc.get("channels")?.unwrap_or(d.channels),
            mlp_hidden: doc.get("mlp_hidden")?.unwrap_or(d.mlp_hidden),
            split_seed: doc.get("split_seed")?.unwrap_or(d.split_seed),
            corrupt_seed: doc.get("corrupt_seed")?.unwrap_or(d.corrupt_seed),
        };
        if cfg.s == 0 || cfg.channels == 0 || cfg.mlp_hidden == 0 {
            return Err(Error::Config("s, channels and mlp_hidden must be positive".into()));
        }
        Ok(cfg)
    }
}

/// Everything a config file can hold. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let known: Vec<&str> = GeneratorConfig::KEYS
            .iter()
            .chain(TrainConfig::KEYS)
            .chain(ExperimentConfig::KEYS)
            .copied()
            .collect();
        doc.reject_unknown(&known)?;
        Ok(Self {
            generator: GeneratorConfig::from_doc(doc)?,
            train: TrainConfig::from_doc(doc)?,
            experiment: ExperimentConfig::from_doc(doc)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_doc(&KeyValueDoc::load(path)?)
    }

    /// Parses a config file, or returns defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Teacher used by the parameter-recovery runs: one channel, a sharp splitting
/// threshold at 2.5 currency units, mixed-sign reduction weights, `k = 0.9` and
/// a confident head.
pub fn acceptance_teacher() -> NetworkParams {
    NetworkParams {
        m: 7,
        s: 6,
        c: 2.0,
        d: -5.0,
        channels: vec![ChannelParams {
            w: vec![-1.5, 2.0, -1.0, 1.5, 1.5, -1.5, 2.0],
            b: -1.0,
            kappa: 9f64.ln(),
        }],
        u: vec![2.5],
        v: 0.0,
    }
}

/// Generator for the recovery runs. Every insurance is paid with nontrivial
/// probability in at least one state so each teacher weight leaves a trace in
/// the data.
pub fn acceptance_generator() -> GeneratorConfig {
    GeneratorConfig {
        n_units: 800,
        n_periods: 24,
        employed_pay_prob: vec![0.45, 0.85, 0.60, 0.80, 0.75, 0.05, 0.70],
        unemployed_pay_prob: vec![0.80, 0.05, 0.60, 0.05, 0.05, 0.50, 0.10],
        transition_eu: 0.05,
        transition_ue: 0.05,
        initial_employed_prob: 0.5,
        amount_low: 5.0,
        amount_high: 100.0,
        seed: 2020,
    }
}

/// One trained model with its table row.
#[derive(Debug, Clone)]
pub struct ComparisonEntry {
    pub row: ComparisonRow,
    pub model: TrainedModel,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
}

impl Comparison {
    pub fn rows(&self) -> Vec<ComparisonRow> {
        self.entries.iter().map(|e| e.row.clone()).collect()
    }

    pub fn table(&self) -> Result<String> {
        comparison_table(&self.rows())
    }

    pub fn network(&self) -> Option<&NetworkParams> {
        self.entries.iter().find_map(|e| match &e.model {
            TrainedModel::Network(p) => Some(p),
            _ => None,
        })
    }

    pub fn accuracy(&self, index: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.row.index == index).map(|e| e.row.accuracy)
    }

    /// The logistic baseline on NPC features alone.
    pub fn logistic_npc(&self) -> Option<&BaselineParams> {
        self.entries.iter().find_map(|e| match &e.model {
            TrainedModel::Baseline(b) if b.kind_name() == "logistic" && b.subset == FeatureSubset::Npc => Some(b),
            _ => None,
        })
    }
}

/// Windows a dataset and draws the balanced split.
pub fn prepare_split(dataset: &PanelDataset, cfg: &ExperimentConfig) -> Result<Split> {
    let windows = windowize(dataset, cfg.s)?;
    data::balanced_split(&windows, cfg.n_per_class, cfg.split_seed)
}

/// Trains the eleven table rows: the network, five logistic subsets and five
/// MLP subsets.
pub fn run_comparison(split: &Split, train_cfg: &TrainConfig, cfg: &ExperimentConfig) -> Result<Comparison> {
    let mut specs = vec![(1, "IntNN", "-".to_string(), ModelKind::Network { channels: cfg.channels })];
    for (i, subset) in FeatureSubset::ALL.into_iter().enumerate() {
        specs.push((2 + i, "Logistic", subset.label().to_string(), ModelKind::Logistic(subset)));
    }
    for (i, subset) in FeatureSubset::ALL.into_iter().enumerate() {
        specs.push((
            7 + i,
            "MLP",
            subset.label().to_string(),
            ModelKind::Mlp { subset, hidden: cfg.mlp_hidden },
        ));
    }
    let entries = specs
        .into_iter()
        .map(|(index, model, inputs, kind)| {
            let (trained, _) = train(kind, split, train_cfg)?;
            let accuracy = trained.evaluate(&split.test)?.accuracy;
            Ok(ComparisonEntry {
                row: ComparisonRow { index, model: model.to_string(), inputs, accuracy },
                model: trained,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { entries })
}

#[derive(Debug, Clone)]
pub struct Robustness {
    pub rate: f64,
    pub clean: Comparison,
    pub corrupt: Comparison,
}

impl Robustness {
    /// Side-by-side fitted network parameters, clean vs corrupted data.
    pub fn parameter_diff(&self, names: &[String]) -> String {
        let mut out = format!("{:<32} {:>14} {:>14}\n", "parameter", "clean", "corrupted");
        let (Some(a), Some(b)) = (self.clean.network(), self.corrupt.network()) else {
            return out;
        };
        let mut line = |name: &str, x: f64, y: f64| {
            let _ = writeln!(out, "{name:<32} {x:>14.6} {y:>14.6}");
        };
        line("c", a.c, b.c);
        line("d", a.d, b.d);
        for (f, (ca, cb)) in a.channels.iter().zip(&b.channels).enumerate() {
            for (j, name) in names.iter().enumerate() {
                line(&format!("channel {f} w[{name}]"), ca.w[j], cb.w[j]);
            }
            line(&format!("channel {f} b"), ca.b, cb.b);
            line(&format!("channel {f} k"), ca.k(), cb.k());
            line(&format!("channel {f} u"), a.u[f], b.u[f]);
        }
        line("v", a.v, b.v);
        out
    }

    /// Smoothing of channel 0 on clean and corrupted data.
    pub fn smoothing(&self) -> Option<(f64, f64)> {
        Some((self.clean.network()?.channels[0].k(), self.corrupt.network()?.channels[0].k()))
    }
}

/// Runs the comparison on the dataset and on a copy with a fraction `rate` of
/// positive payments zeroed. Both runs use the same windows and split.
pub fn run_robustness(dataset: &PanelDataset, rate: f64, run: &RunConfig) -> Result<Robustness> {
    let corrupted = corrupt_missing(dataset, rate, run.experiment.corrupt_seed)?;
    let clean = run_comparison(&prepare_split(dataset, &run.experiment)?, &run.train, &run.experiment)?;
    let corrupt = run_comparison(&prepare_split(&corrupted, &run.experiment)?, &run.train, &run.experiment)?;
    Ok(Robustness { rate, clean, corrupt })
}

/// Step series of length `t_len` whose last `t0` entries are 1.
pub fn step_series(t_len: usize, t0: usize) -> Vec<f64> {
    (1..=t_len).map(|t| if t + t0 > t_len { 1.0 } else { 0.0 }).collect()
}

/// Step series with `round(noise * t0)` of the post-step entries set to 0.9.
pub fn noisy_step_series(t_len: usize, t0: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = step_series(t_len, t0);
    let n_bad = (noise * t0 as f64).round() as usize;
    for i in sample_indices(rng, t0, n_bad.min(t0)) {
        x[t_len - t0 + i] = 0.9;
    }
    x
}

/// One point of a filter demo curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t0: usize,
    pub k: f64,
    pub value: f64,
}

/// Filter value at the end of clean (`noise = 0`) or noisy step series.
///
/// The noisy series for each `t0` is drawn once from a stream keyed by `seed`
/// and shared across every `k`, so curves differ only through `k`.
pub fn filter_curve(t_len: usize, t0s: &[usize], ks: &[f64], noise: f64, seed: u64) -> Result<Vec<CurvePoint>> {
    if t_len == 0 {
        return Err(Error::InvalidInput("series length must be positive".into()));
    }
    if let Some(t0) = t0s.iter().find(|&&t0| t0 > t_len) {
        return Err(Error::InvalidInput(format!("t0 = {t0} exceeds T = {t_len}")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidParameter(format!("noise {noise} outside [0, 1]")));
    }
    let ks = ks.iter().map(|&k| SmoothingParam::new(k)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(t0s.len() * ks.len());
    for &t0 in t0s {
        let x = if noise > 0.0 {
            noisy_step_series(t_len, t0, noise, &mut rng)
        } else {
            step_series(t_len, t0)
        };
        for &k in &ks {
            out.push(CurvePoint { t0, k: k.value(), value: accumulate(&x, k.value()).value() });
        }
    }
    Ok(out)
}

/// Mean `|value - t0|` over the points with smoothing `k`.
pub fn mean_abs_error(points: &[CurvePoint], k: f64) -> f64 {
    let sel: Vec<_> = points.iter().filter(|p| p.k == k).collect();
    sel.iter().map(|p| (p.value - p.t0 as f64).abs()).sum::<f64>() / sel.len() as f64
}

/// Bayes accuracy of a teacher on windows it labeled: `mean(max(p, 1 - p))`.
pub fn teacher_bayes_accuracy(teacher: &NetworkParams, samples: &[WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let total = samples
        .iter()
        .map(|s| teacher.forward(s).map(|p| p.max(1.0 - p)))
        .sum::<Result<f64>>()?;
    Ok(total / samples.len() as f64)
}

/// Sign pattern (`-1`, `0`, `1`) of each reduction weight in a channel.
pub fn sign_pattern(weights: &[f64]) -> Vec<i8> {
    weights.iter().map(|w| if *w > 0.0 { 1 } else if *w < 0.0 { -1 } else { 0 }).collect()
}

/// True when the patterns agree everywhere or disagree everywhere (a flip of
/// `(w, b, u)` leaves the network output unchanged).
pub fn signs_match_up_to_flip(a: &[f64], b: &[f64]) -> bool {
    let (pa, pb) = (sign_pattern(a), sign_pattern(b));
    let flipped: Vec<i8> = pb.iter().map(|s| -s).collect();
    pa == pb || pa == flipped
}
