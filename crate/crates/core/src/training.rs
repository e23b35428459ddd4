//! Adam, the shared training loop, evaluation metrics and gradient checks.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValueDoc;
use crate::error::{Error, Result};
use crate::features::{self, BaselineParams, FeatureSubset};
use crate::math::cross_entropy;
use crate::network::{NetworkParams, WindowSample};

/// Anything with a binary label.
pub trait Labeled {
    fn label(&self) -> u8;
}

/// Named subset of a model's flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

impl ParamGroup {
    pub fn new(name: &str, indices: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            indices,
        }
    }
}

/// A differentiable binary classifier with a flat parameter vector.
///
/// Implementations must agree between `flatten`, `assign` and
/// `batch_gradient` on the parameter layout.
pub trait Model: Clone {
    type Sample: Labeled;

    fn flatten(&self) -> Vec<f64>;
    fn assign(&mut self, flat: &[f64]);
    fn param_groups(&self) -> Vec<ParamGroup>;
    fn predict_proba(&self, sample: &Self::Sample) -> f64;
    /// Mean cross-entropy plus the model's penalty.
    fn batch_loss(&self, batch: &[&Self::Sample], lambda: f64) -> f64;
    fn batch_gradient(&self, batch: &[&Self::Sample], lambda: f64) -> Vec<f64>;
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L1 weight on the head; `None` picks 0 for one channel and 1e-3 otherwise.
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Raw payments are divided by this before the splitting layer.
    pub payment_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 200,
            batch_size: 256,
            lambda: None,
            seed: 0,
            payment_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "beta1",
        "beta2",
        "eps_adam",
        "epochs",
        "batch_size",
        "lambda",
        "seed",
        "payment_scale",
    ];

    /// Reads the keys this config owns; absent keys keep their defaults.
    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            learning_rate: doc.get("learning_rate")?.unwrap_or(d.learning_rate),
            beta1: doc.get("beta1")?.unwrap_or(d.beta1),
            beta2: doc.get("beta2")?.unwrap_or(d.beta2),
            eps_adam: doc.get("eps_adam")?.unwrap_or(d.eps_adam),
            epochs: doc.get("epochs")?.unwrap_or(d.epochs),
            batch_size: doc.get("batch_size")?.unwrap_or(d.batch_size),
            lambda: doc.get("lambda")?.or(d.lambda),
            seed: doc.get("seed")?.unwrap_or(d.seed),
            payment_scale: doc.get("payment_scale")?.unwrap_or(d.payment_scale),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps_adam > 0.0) {
            return bad("eps_adam must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return bad("lambda must be >= 0");
            }
        }
        if !(self.payment_scale > 0.0) {
            return bad("payment_scale must be > 0");
        }
        Ok(())
    }

    pub fn lambda_for(&self, n_channels: usize) -> f64 {
        self.lambda
            .unwrap_or(if n_channels > 1 { 1e-3 } else { 0.0 })
    }
}

/// First and second moment buffers of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    config: &TrainConfig,
    step: u64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Config(format!(
            "adam shape mismatch: {n} params, {} grads, {}/{} moments",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if step == 0 {
        return Err(Error::Config("adam step index starts at 1".into()));
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps_adam);
    }
    Ok(())
}

/// Classification metrics at threshold 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean cross-entropy, without any penalty.
    pub mean_loss: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: [[usize; 2]; 2],
    pub n: usize,
}

impl Metrics {
    pub fn from_predictions(labels: &[u8], probs: &[f64]) -> Result<Self> {
        if labels.is_empty() || labels.len() != probs.len() {
            return Err(Error::InvalidInput(
                "metrics need a nonempty, matched set of labels and predictions".into(),
            ));
        }
        let mut confusion = [[0usize; 2]; 2];
        let mut loss = 0.0;
        for (&y, &p) in labels.iter().zip(probs) {
            confusion[y as usize][usize::from(p >= 0.5)] += 1;
            loss += cross_entropy(p, y);
        }
        let n = labels.len();
        Ok(Self {
            accuracy: (confusion[0][0] + confusion[1][1]) as f64 / n as f64,
            mean_loss: loss / n as f64,
            confusion,
            n,
        })
    }
}

pub fn evaluate<M: Model>(model: &M, samples: &[M::Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty sample set".into()));
    }
    let labels: Vec<u8> = samples.iter().map(Labeled::label).collect();
    let probs: Vec<f64> = samples.iter().map(|s| model.predict_proba(s)).collect();
    Metrics::from_predictions(&labels, &probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Penalized training objective over the full training set after the epoch.
    pub train_loss: f64,
    pub train: Metrics,
    pub test: Option<Metrics>,
}

/// Objective at initialization plus one record per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    /// Penalized training objective before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |r| r.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub log: TrainingLog,
}

/// Minibatch Adam on the penalized objective.
///
/// Each epoch shuffles the training set with a ChaCha8 stream keyed by
/// `(seed, epoch)`, so runs are reproducible given the seed.
pub fn fit<M: Model>(
    mut model: M,
    train: &[M::Sample],
    test: Option<&[M::Sample]>,
    lambda: f64,
    config: &TrainConfig,
) -> Result<Trained<M>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let all: Vec<&M::Sample> = train.iter().collect();
    let initial_loss = model.batch_loss(&all, lambda);
    let mut flat = model.flatten();
    let mut state = AdamState::new(flat.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let grad = model.batch_gradient(&batch, lambda);
            step += 1;
            adam_step(&mut state, &mut flat, &grad, config, step)?;
            model.assign(&flat);
        }
        let train_metrics = evaluate(&model, train)?;
        let test_metrics = match test {
            Some(t) if !t.is_empty() => Some(evaluate(&model, t)?),
            _ => None,
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: model.batch_loss(&all, lambda),
            train: train_metrics,
            test: test_metrics,
        });
    }
    Ok(Trained {
        model,
        log: TrainingLog { initial_loss, epochs: history },
    })
}

/// Which model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Network { channels: usize },
    Logistic(FeatureSubset),
    Mlp { subset: FeatureSubset, hidden: usize },
}

/// A trained model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Network(NetworkParams),
    Baseline(BaselineParams),
}

impl TrainedModel {
    pub fn predict_proba(&self, sample: &WindowSample) -> Result<f64> {
        match self {
            TrainedModel::Network(p) => p.forward(sample),
            TrainedModel::Baseline(b) => b.predict_window(sample),
        }
    }

    pub fn evaluate(&self, samples: &[WindowSample]) -> Result<Metrics> {
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        let probs = samples
            .iter()
            .map(|s| self.predict_proba(s))
            .collect::<Result<Vec<_>>>()?;
        Metrics::from_predictions(&labels, &probs)
    }

    pub fn to_text(&self) -> String {
        match self {
            TrainedModel::Network(p) => p.to_text(),
            TrainedModel::Baseline(b) => b.to_text(),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = KeyValueDoc::parse(text)?;
        if doc.contains("kind") {
            BaselineParams::from_doc(&doc).map(TrainedModel::Baseline)
        } else {
            NetworkParams::from_doc(&doc).map(TrainedModel::Network)
        }
    }
}

/// Training and test windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Trains one model family on a split of windows.
///
/// Baselines see handcrafted features; the network sees raw windows divided by
/// `payment_scale`, and its splitting slope is mapped back to raw amounts at
/// the end (`c_raw = c / payment_scale`), so the returned parameters act on
/// unscaled payments.
pub fn train(kind: ModelKind, split: &Split, config: &TrainConfig) -> Result<(TrainedModel, TrainingLog)> {
    if split.train.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    config.validate()?;
    let first = &split.train[0];
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(u64::MAX);
    match kind {
        ModelKind::Network { channels } => {
            if channels == 0 {
                return Err(Error::Config("network needs at least one channel".into()));
            }
            let scale = config.payment_scale;
            let train: Vec<_> = split.train.iter().map(|s| s.scaled(scale)).collect();
            let test: Vec<_> = split.test.iter().map(|s| s.scaled(scale)).collect();
            let init = NetworkParams::init(first.m(), first.s(), channels, &mut init_rng);
            let lambda = config.lambda_for(channels);
            let trained = fit(init, &train, Some(&test), lambda, config)?;
            let mut params = trained.model;
            params.c /= scale;
            Ok((TrainedModel::Network(params), trained.log))
        }
        ModelKind::Logistic(subset) | ModelKind::Mlp { subset, .. } => {
            let hidden = match kind {
                ModelKind::Mlp { hidden, .. } => Some(hidden),
                _ => None,
            };
            let (params, log) = features::fit_baseline(subset, hidden, split, config, &mut init_rng)?;
            Ok((TrainedModel::Baseline(params), log))
        }
    }
}

/// Largest relative error per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error() <= tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, err) in &self.groups {
            writeln!(f, "{name:<8} max relative error {err:.3e}")?;
        }
        write!(f, "overall  max relative error {:.3e}", self.max_error())
    }
}

/// Magnitudes below this are compared on an absolute scale. Central
/// differences at step 1e-6 on values of order 10 carry roundoff near 1e-9,
/// so smaller gradient entries cannot be resolved relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares an analytic gradient against central differences of `f` at `x`.
pub fn check_gradient_fn(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    groups: &[ParamGroup],
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::InvalidParameter(format!("finite-difference step {step} outside (0, 1e-3]")));
    }
    if analytic.len() != x.len() {
        return Err(Error::InvalidInput("gradient length does not match parameters".into()));
    }
    let mut probe = x.to_vec();
    let groups = groups
        .iter()
        .map(|g| {
            let err = g
                .indices
                .iter()
                .map(|&i| {
                    let orig = probe[i];
                    probe[i] = orig + step;
                    let up = f(&probe);
                    probe[i] = orig - step;
                    let down = f(&probe);
                    probe[i] = orig;
                    relative_error(analytic[i], (up - down) / (2.0 * step))
                })
                .fold(0.0, f64::max);
            (g.name.clone(), err)
        })
        .collect();
    Ok(GradCheckReport { groups })
}

/// Finite-difference check of a model's `batch_gradient`.
pub fn gradient_check<M: Model>(
    model: &M,
    batch: &[M::Sample],
    lambda: f64,
    step: f64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let refs: Vec<&M::Sample> = batch.iter().collect();
    let x = model.flatten();
    let analytic = model.batch_gradient(&refs, lambda);
    let mut probe_model = model.clone();
    let f = |theta: &[f64]| {
        let mut m = probe_model.clone();
        m.assign(theta);
        m.batch_loss(&refs, lambda)
    };
    let report = check_gradient_fn(f, &x, &analytic, &model.param_groups(), step);
    probe_model.assign(&x);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut st = AdamState { m: vec![0.5, -0.2], v: vec![0.1, 0.3] };
        let mut p = vec![1.0, 2.0];
        adam_step(&mut st, &mut p, &[0.0, 0.0], &cfg, 1).unwrap();
        // Moments decay, so the step is m_hat / sqrt(v_hat) != 0 unless m = 0.
        assert_eq!(st.m, vec![0.45, -0.18000000000000002]);
        assert!(st.v[0] < 0.1 && st.v[1] < 0.3);
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, 2.0];
        adam_step(&mut st, &mut p, &[0.0, 0.0], &cfg, 1).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(3);
        let mut p = vec![0.0; 3];
        let g = [3.0, -0.002, 50.0];
        for step in 1..=500 {
            let before = p.clone();
            adam_step(&mut st, &mut p, &g, &cfg, step).unwrap();
            for i in 0..3 {
                let delta = p[i] - before[i];
                assert!((delta + cfg.learning_rate * g[i].signum()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_three_step_trace() {
        // f(x) = (x - 3)^2 from x = 0, hand-computed with lr = 0.1.
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut st = AdamState::new(1);
        let mut x = vec![0.0];
        let mut xs = Vec::new();
        for step in 1..=3 {
            let g = [2.0 * (x[0] - 3.0)];
            adam_step(&mut st, &mut x, &g, &cfg, step).unwrap();
            xs.push(x[0]);
        }
        // step 1: g = -6, m = -0.6, v = 0.036, m_hat = -6, v_hat = 36 -> x = 0.1 * 6 / (6 + 1e-8)
        let x1: f64 = 0.1 * 6.0 / (6.0 + 1e-8);
        let g2 = 2.0 * (x1 - 3.0);
        let m2 = 0.9 * -0.6 + 0.1 * g2;
        let v2 = 0.999 * 0.036 + 0.001 * g2 * g2;
        let x2 = x1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + 1e-8);
        let g3 = 2.0 * (x2 - 3.0);
        let m3 = 0.9 * m2 + 0.1 * g3;
        let v3 = 0.999 * v2 + 0.001 * g3 * g3;
        let x3 = x2 - 0.1 * (m3 / (1.0 - 0.729)) / ((v3 / (1.0 - 0.997002999)).sqrt() + 1e-8);
        for (got, want) in xs.iter().zip([x1, x2, x3]) {
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut st, &mut [0.0; 3], &[0.0; 3], &cfg, 1).is_err());
        assert!(adam_step(&mut st, &mut [0.0; 2], &[0.0; 2], &cfg, 0).is_err());
    }

    #[test]
    fn metrics_counts() {
        let m = Metrics::from_predictions(&[1, 0, 1, 0], &[0.9, 0.1, 0.7, 0.2]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion, [[2, 0], [0, 2]]);
        let m = Metrics::from_predictions(&[1, 0, 1, 0], &[0.6; 4]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.confusion, [[0, 2], [0, 2]]);
        assert!(Metrics::from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = TrainConfig::from_doc(&KeyValueDoc::parse("epochs = 5\nlambda = 0.1").unwrap()).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.lambda_for(1), 0.1);
        let d = TrainConfig::default();
        assert_eq!((d.learning_rate, d.batch_size, d.epochs), (1e-2, 256, 200));
        assert_eq!(d.lambda_for(1), 0.0);
        assert_eq!(d.lambda_for(4), 1e-3);
        assert!(TrainConfig::from_doc(&KeyValueDoc::parse("beta1 = 1").unwrap()).is_err());
        assert!(TrainConfig::from_doc(&KeyValueDoc::parse("payment_scale = 0").unwrap()).is_err());
    }

    #[test]
    fn quadratic_gradient_check() {
        let a = [[3.0, 0.5, 0.0], [0.5, 2.0, -1.0], [0.0, -1.0, 4.0]];
        let b = [1.0, -2.0, 0.5];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                s += b[i] * x[i];
                for j in 0..3 {
                    s += 0.5 * a[i][j] * x[i] * x[j];
                }
            }
            s
        };
        let x = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = (0..3)
            .map(|i| b[i] + (0..3).map(|j| a[i][j] * x[j]).sum::<f64>())
            .collect();
        let groups = [ParamGroup::new("x", vec![0, 1, 2])];
        let rep = check_gradient_fn(f, &x, &grad, &groups, 1e-4).unwrap();
        assert!(rep.passes(1e-10), "{rep}");
        let mut wrong = grad.clone();
        wrong[1] *= 1.01;
        assert!(!check_gradient_fn(f, &x, &wrong, &groups, 1e-4).unwrap().passes(1e-4));
        assert!(check_gradient_fn(f, &x, &grad, &groups, 1e-2).is_err());
    }
}
