//! Handcrafted window features and the baseline classifiers.
//!
//! Features per window (periods oldest to newest, `t` = current period):
//!
//! - `NPC_j`: terminal run length of the *not-paying* indicator of insurance `j`.
//! - `IC`: number of insurances with a positive payment at `t`.
//! - `PC`: terminal run length of the indicator "more than `threshold` insurances paid".
//!
//! Baselines are a logistic regression and a one-hidden-layer MLP with logistic
//! activations over a subset of these features.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::config::KeyValueDoc;
use crate::error::{Error, Result};
use crate::filters::terminal_run;
use crate::math::{cross_entropy, sigmoid, sign0};
use crate::network::WindowSample;
use crate::training::{fit, Labeled, Model, ParamGroup, Split, TrainConfig, TrainingLog};

/// Default insurance-count threshold for the payment-change feature.
pub const PC_THRESHOLD: usize = 2;

/// Default hidden width of the MLP baseline.
pub const MLP_HIDDEN: usize = 16;

/// 1 if the amount is strictly positive.
pub fn binarize_payment(amount: f64) -> Result<u8> {
    if !(amount >= 0.0) {
        return Err(Error::InvalidInput(format!("payment {amount} is negative")));
    }
    Ok(u8::from(amount > 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub npc: Vec<usize>,
    pub ic: usize,
    pub pc: usize,
}

impl FeatureVector {
    /// Values of the selected columns, in `NPC..., IC, PC` order.
    pub fn select(&self, subset: FeatureSubset) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.npc.len() + 2);
        if subset.has_npc() {
            out.extend(self.npc.iter().map(|&v| v as f64));
        }
        if subset.has_ic() {
            out.push(self.ic as f64);
        }
        if subset.has_pc() {
            out.push(self.pc as f64);
        }
        out
    }
}

pub fn extract_features(sample: &WindowSample) -> FeatureVector {
    extract_features_with_threshold(sample, PC_THRESHOLD)
}

pub fn extract_features_with_threshold(sample: &WindowSample, pc_threshold: usize) -> FeatureVector {
    let (m, s) = (sample.m(), sample.s());
    let npc = (0..m)
        .map(|j| terminal_run(sample.series(j).iter().map(|&x| x <= 0.0)))
        .collect();
    let count = |t: usize| (0..m).filter(|&j| sample.payment(j, t) > 0.0).count();
    let ic = count(s - 1);
    let pc = terminal_run((0..s).map(|t| count(t) > pc_threshold));
    FeatureVector { npc, ic, pc }
}

/// Feature combinations compared in the model table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSubset {
    NpcIcPc,
    Npc,
    PcIc,
    Pc,
    Ic,
}

impl FeatureSubset {
    /// Table order.
    pub const ALL: [FeatureSubset; 5] = [
        FeatureSubset::NpcIcPc,
        FeatureSubset::Npc,
        FeatureSubset::PcIc,
        FeatureSubset::Pc,
        FeatureSubset::Ic,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FeatureSubset::NpcIcPc => "NPC, IC, PC",
            FeatureSubset::Npc => "NPC",
            FeatureSubset::PcIc => "PC, IC",
            FeatureSubset::Pc => "PC",
            FeatureSubset::Ic => "IC",
        }
    }

    fn has_npc(self) -> bool {
        matches!(self, FeatureSubset::NpcIcPc | FeatureSubset::Npc)
    }

    fn has_ic(self) -> bool {
        matches!(self, FeatureSubset::NpcIcPc | FeatureSubset::PcIc | FeatureSubset::Ic)
    }

    fn has_pc(self) -> bool {
        matches!(self, FeatureSubset::NpcIcPc | FeatureSubset::PcIc | FeatureSubset::Pc)
    }

    /// Column names for `m` insurances.
    pub fn columns(self, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.has_npc() {
            out.extend((1..=m).map(|j| format!("npc_{j}")));
        }
        if self.has_ic() {
            out.push("ic".into());
        }
        if self.has_pc() {
            out.push("pc".into());
        }
        out
    }
}

impl FromStr for FeatureSubset {
    type Err = Error;

    /// Accepts any order and separator among `npc`, `ic`, `pc` (e.g. `npc,ic,pc`, `PC+IC`).
    fn from_str(s: &str) -> Result<Self> {
        let mut parts: Vec<String> = s
            .split(|c: char| c == ',' || c == '+' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(str::to_ascii_lowercase)
            .collect();
        parts.sort();
        parts.dedup();
        let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
        match parts.as_slice() {
            ["ic", "npc", "pc"] => Ok(FeatureSubset::NpcIcPc),
            ["npc"] => Ok(FeatureSubset::Npc),
            ["ic", "pc"] => Ok(FeatureSubset::PcIc),
            ["pc"] => Ok(FeatureSubset::Pc),
            ["ic"] => Ok(FeatureSubset::Ic),
            _ => Err(Error::Config(format!("unknown feature subset `{s}`"))),
        }
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A feature row with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub x: Vec<f64>,
    pub label: u8,
}

impl Labeled for FeatureSample {
    fn label(&self) -> u8 {
        self.label
    }
}

pub fn feature_samples(samples: &[WindowSample], subset: FeatureSubset) -> Vec<FeatureSample> {
    samples
        .iter()
        .map(|s| FeatureSample {
            x: extract_features(s).select(subset),
            label: s.label,
        })
        .collect()
}

/// Logistic regression; the penalty is `lambda * |weights|_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn zeros(n: usize) -> Self {
        Self {
            weights: vec![0.0; n],
            intercept: 0.0,
        }
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

impl Model for LogisticModel {
    type Sample = FeatureSample;

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.intercept);
        v
    }

    fn assign(&mut self, flat: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&flat[..n]);
        self.intercept = flat[n];
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        let n = self.weights.len();
        vec![
            ParamGroup::new("weights", (0..n).collect()),
            ParamGroup::new("intercept", vec![n]),
        ]
    }

    fn predict_proba(&self, sample: &FeatureSample) -> f64 {
        sigmoid(self.logit(&sample.x))
    }

    fn batch_loss(&self, batch: &[&FeatureSample], lambda: f64) -> f64 {
        let ce: f64 = batch.iter().map(|s| cross_entropy(self.predict_proba(s), s.label)).sum();
        ce / batch.len() as f64 + lambda * self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }

    fn batch_gradient(&self, batch: &[&FeatureSample], lambda: f64) -> Vec<f64> {
        let n = self.weights.len();
        let mut g = vec![0.0; n + 1];
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let e = scale * (self.predict_proba(s) - f64::from(s.label));
            for (gi, xi) in g.iter_mut().zip(&s.x) {
                *gi += e * xi;
            }
            g[n] += e;
        }
        for (gi, w) in g.iter_mut().zip(&self.weights) {
            *gi += lambda * sign0(*w);
        }
        g
    }
}

/// One hidden layer of logistic units feeding a logistic output.
/// The penalty is `lambda * |output weights|_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub n_inputs: usize,
    /// `hidden x n_inputs`, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl MlpModel {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init<R: Rng + ?Sized>(n_inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let a = 1.0 / (n_inputs as f64).sqrt();
        let o = 1.0 / (hidden as f64).sqrt();
        Self {
            n_inputs,
            hidden_weights: (0..hidden * n_inputs).map(|_| rng.gen_range(-a..a)).collect(),
            hidden_bias: (0..hidden).map(|_| rng.gen_range(-a..a)).collect(),
            output_weights: (0..hidden).map(|_| rng.gen_range(-o..o)).collect(),
            output_bias: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        self.hidden_weights
            .chunks(self.n_inputs)
            .zip(&self.hidden_bias)
            .map(|(row, b)| sigmoid(b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()))
            .collect()
    }

    fn output(&self, h: &[f64]) -> f64 {
        sigmoid(self.output_bias + self.output_weights.iter().zip(h).map(|(w, h)| w * h).sum::<f64>())
    }
}

impl Model for MlpModel {
    type Sample = FeatureSample;

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.hidden_weights.clone();
        v.extend_from_slice(&self.hidden_bias);
        v.extend_from_slice(&self.output_weights);
        v.push(self.output_bias);
        v
    }

    fn assign(&mut self, flat: &[f64]) {
        let (a, rest) = flat.split_at(self.hidden_weights.len());
        let (b, rest) = rest.split_at(self.hidden_bias.len());
        let (c, rest) = rest.split_at(self.output_weights.len());
        self.hidden_weights.copy_from_slice(a);
        self.hidden_bias.copy_from_slice(b);
        self.output_weights.copy_from_slice(c);
        self.output_bias = rest[0];
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        let a = self.hidden_weights.len();
        let h = self.hidden();
        vec![
            ParamGroup::new("hidden_w", (0..a).collect()),
            ParamGroup::new("hidden_b", (a..a + h).collect()),
            ParamGroup::new("output_w", (a + h..a + 2 * h).collect()),
            ParamGroup::new("output_b", vec![a + 2 * h]),
        ]
    }

    fn predict_proba(&self, sample: &FeatureSample) -> f64 {
        self.output(&self.hidden_activations(&sample.x))
    }

    fn batch_loss(&self, batch: &[&FeatureSample], lambda: f64) -> f64 {
        let ce: f64 = batch.iter().map(|s| cross_entropy(self.predict_proba(s), s.label)).sum();
        ce / batch.len() as f64 + lambda * self.output_weights.iter().map(|w| w.abs()).sum::<f64>()
    }

    fn batch_gradient(&self, batch: &[&FeatureSample], lambda: f64) -> Vec<f64> {
        let h_n = self.hidden();
        let n_in = self.n_inputs;
        let a = self.hidden_weights.len();
        let mut g = vec![0.0; a + 2 * h_n + 1];
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let h = self.hidden_activations(&s.x);
            let e = scale * (self.output(&h) - f64::from(s.label));
            g[a + 2 * h_n] += e;
            for k in 0..h_n {
                g[a + h_n + k] += e * h[k];
                let gz = e * self.output_weights[k] * h[k] * (1.0 - h[k]);
                g[a + k] += gz;
                for (i, x) in s.x.iter().enumerate() {
                    g[k * n_in + i] += gz * x;
                }
            }
        }
        for (gi, w) in g[a + h_n..a + 2 * h_n].iter_mut().zip(&self.output_weights) {
            *gi += lambda * sign0(*w);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Logistic(LogisticModel),
    Mlp(MlpModel),
}

/// A fitted baseline and the feature columns it consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub subset: FeatureSubset,
    /// Number of insurances the NPC columns were built for.
    pub m: usize,
    pub model: BaselineModel,
}

impl BaselineParams {
    pub fn kind_name(&self) -> &'static str {
        match self.model {
            BaselineModel::Logistic(_) => "logistic",
            BaselineModel::Mlp(_) => "mlp",
        }
    }

    pub fn predict_features(&self, x: &FeatureSample) -> f64 {
        match &self.model {
            BaselineModel::Logistic(l) => l.predict_proba(x),
            BaselineModel::Mlp(n) => n.predict_proba(x),
        }
    }

    pub fn predict_window(&self, sample: &WindowSample) -> Result<f64> {
        if sample.m() != self.m {
            return Err(Error::Config(format!(
                "sample has {} insurances, model expects {}",
                sample.m(),
                self.m
            )));
        }
        let x = FeatureSample {
            x: extract_features(sample).select(self.subset),
            label: sample.label,
        };
        Ok(self.predict_features(&x))
    }

    /// Logistic coefficients keyed by column name; `None` for the MLP.
    pub fn named_coefficients(&self) -> Option<Vec<(String, f64)>> {
        match &self.model {
            BaselineModel::Logistic(l) => Some(
                self.subset
                    .columns(self.m)
                    .into_iter()
                    .zip(l.weights.iter().copied())
                    .collect(),
            ),
            BaselineModel::Mlp(_) => None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut doc = KeyValueDoc::new();
        doc.push("version", 1);
        doc.push("kind", self.kind_name());
        doc.push("features", self.subset.columns(self.m).join(","));
        doc.push("m", self.m);
        match &self.model {
            BaselineModel::Logistic(l) => {
                doc.push_array("weights", &l.weights);
                doc.push("intercept", l.intercept);
            }
            BaselineModel::Mlp(n) => {
                doc.push("hidden", n.hidden());
                doc.push_array("hidden_weights", &n.hidden_weights);
                doc.push_array("hidden_bias", &n.hidden_bias);
                doc.push_array("output_weights", &n.output_weights);
                doc.push("output_bias", n.output_bias);
            }
        }
        doc.to_text()
    }

    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let version: u32 = doc.require("version")?;
        if version != 1 {
            return Err(Error::Config(format!("unsupported model version {version}")));
        }
        let m: usize = doc.require("m")?;
        let columns = doc.require_str("features")?;
        let subset = FeatureSubset::ALL
            .into_iter()
            .find(|s| s.columns(m).join(",") == columns)
            .ok_or_else(|| Error::Config(format!("unrecognized feature columns `{columns}`")))?;
        let n_in = subset.columns(m).len();
        let shape_err = |what: &str| Error::Config(format!("{what} has the wrong length"));
        let model = match doc.require_str("kind")? {
            "logistic" => {
                doc.reject_unknown(&["version", "kind", "features", "m", "weights", "intercept"])?;
                let weights = doc.require_array("weights")?;
                if weights.len() != n_in {
                    return Err(shape_err("weights"));
                }
                BaselineModel::Logistic(LogisticModel {
                    weights,
                    intercept: doc.require("intercept")?,
                })
            }
            "mlp" => {
                doc.reject_unknown(&[
                    "version", "kind", "features", "m", "hidden", "hidden_weights", "hidden_bias",
                    "output_weights", "output_bias",
                ])?;
                let hidden: usize = doc.require("hidden")?;
                let mlp = MlpModel {
                    n_inputs: n_in,
                    hidden_weights: doc.require_array("hidden_weights")?,
                    hidden_bias: doc.require_array("hidden_bias")?,
                    output_weights: doc.require_array("output_weights")?,
                    output_bias: doc.require("output_bias")?,
                };
                if mlp.hidden_weights.len() != hidden * n_in {
                    return Err(shape_err("hidden_weights"));
                }
                if mlp.hidden_bias.len() != hidden || mlp.output_weights.len() != hidden {
                    return Err(shape_err("hidden layer"));
                }
                BaselineModel::Mlp(mlp)
            }
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        };
        Ok(Self { subset, m, model })
    }
}

/// Fits a logistic (`hidden = None`) or MLP baseline on the split's features.
pub fn fit_baseline<R: Rng + ?Sized>(
    subset: FeatureSubset,
    hidden: Option<usize>,
    split: &Split,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(BaselineParams, TrainingLog)> {
    let m = split
        .train
        .first()
        .ok_or_else(|| Error::InvalidInput("empty training split".into()))?
        .m();
    let train = feature_samples(&split.train, subset);
    let test = feature_samples(&split.test, subset);
    let n_in = subset.columns(m).len();
    let lambda = config.lambda.unwrap_or(0.0);
    let (model, log) = match hidden {
        None => {
            let t = fit(LogisticModel::zeros(n_in), &train, Some(&test), lambda, config)?;
            (BaselineModel::Logistic(t.model), t.log)
        }
        Some(0) => return Err(Error::Config("MLP hidden width must be positive".into())),
        Some(h) => {
            let t = fit(MlpModel::init(n_in, h, rng), &train, Some(&test), lambda, config)?;
            (BaselineModel::Mlp(t.model), t.log)
        }
    };
    Ok((BaselineParams { subset, m, model }, log))
}

/// Writes features as CSV with header `npc_1..npc_m,ic,pc,label`.
pub fn write_feature_csv(samples: &[WindowSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let m = samples.first().map_or(0, WindowSample::m);
    let mut header = FeatureSubset::NpcIcPc.columns(m);
    header.push("label".into());
    let mut out = header.join(",") + "\n";
    for s in samples {
        let f = extract_features(s);
        for v in &f.npc {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{},{}\n", f.ic, f.pc, s.label));
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub index: usize,
    pub model: String,
    /// Feature subset label, or `-` for the network.
    pub inputs: String,
    pub accuracy: f64,
}

/// Aligned text table `Index | Model | Inputs | Test Accuracy`, rows sorted by index.
pub fn comparison_table(rows: &[ComparisonRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("comparison table needs at least one row".into()));
    }
    if let Some(r) = rows.iter().find(|r| !r.accuracy.is_finite()) {
        return Err(Error::InvalidInput(format!("row {} has no accuracy", r.index)));
    }
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.index);
    let mut out = format!("{:<6} {:<9} {:<12} {}\n", "Index", "Model", "Inputs", "Test Accuracy");
    for r in &rows {
        out.push_str(&format!(
            "{:<6} {:<9} {:<12} {:.5}\n",
            r.index, r.model, r.inputs, r.accuracy
        ));
    }
    if rows.iter().any(|r| r.model == "MLP") {
        out.push_str("Note: the non-interpretable baseline rows use an MLP only; no random forest.\n");
    }
    Ok(out)
}
