//! The interpretable network.
//!
//! For a window of `m` payment series over `s` periods, the network computes
//!
//! 1. splitting: `h[j][t] = sigmoid(c * x[j][t] + d)`, with `c`, `d` shared by all cells;
//! 2. reduction, per channel `f` and period `t`: `r[f][t] = sigmoid(w_f . h[.][t] + b_f)`;
//! 3. filter, per channel: `z_f = D(r[f], k_f)` with `k_f = sigmoid(kappa_f)`;
//! 4. head: `P(y = 1) = sigmoid(sum_f u_f z_f + v)`.
//!
//! The training objective is the mean cross-entropy plus `lambda * |u|_1`.

use std::fmt;

use rand::Rng;

use crate::config::KeyValueDoc;
use crate::error::{Error, Result};
use crate::filters;
use crate::math::{cross_entropy, logit, sigmoid, sign0};
use crate::training::{Labeled, Model, ParamGroup};

/// Serialization format version written by [`NetworkParams::to_text`].
pub const FORMAT_VERSION: u32 = 1;

/// Channels with `|u_f|` at or below this are reported as inactive.
pub const ACTIVE_TOLERANCE: f64 = 1e-3;

/// One training example: an `m x s` block of lagged payments and a label.
///
/// Periods are ordered oldest to newest, so `payment(j, s - 1)` is the
/// current period.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    m: usize,
    s: usize,
    payments: Vec<f64>,
    pub label: u8,
}

impl WindowSample {
    /// Builds a sample from `m` rows of `s` payments each.
    pub fn new(rows: Vec<Vec<f64>>, label: u8) -> Result<Self> {
        let m = rows.len();
        let s = rows.first().map_or(0, Vec::len);
        if m == 0 || s == 0 {
            return Err(Error::InvalidInput("window must be at least 1x1".into()));
        }
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::InvalidInput("ragged payment rows".into()));
        }
        Self::from_flat(m, s, rows.concat(), label)
    }

    /// Builds a sample from a row-major `m x s` buffer.
    pub fn from_flat(m: usize, s: usize, payments: Vec<f64>, label: u8) -> Result<Self> {
        if payments.len() != m * s {
            return Err(Error::InvalidInput(format!(
                "expected {} payments for a {m}x{s} window, got {}",
                m * s,
                payments.len()
            )));
        }
        if let Some(v) = payments.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("payment {v} is not a finite nonnegative amount")));
        }
        if label > 1 {
            return Err(Error::InvalidInput(format!("label {label} is not binary")));
        }
        Ok(Self { m, s, payments, label })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> usize {
        self.s
    }

    #[inline]
    pub fn payment(&self, insurance: usize, period: usize) -> f64 {
        self.payments[insurance * self.s + period]
    }

    /// Payment series of one insurance, oldest first.
    pub fn series(&self, insurance: usize) -> &[f64] {
        &self.payments[insurance * self.s..(insurance + 1) * self.s]
    }

    pub fn payments(&self) -> &[f64] {
        &self.payments
    }

    /// Copy with every payment divided by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            payments: self.payments.iter().map(|p| p / scale).collect(),
            ..self.clone()
        }
    }
}

impl Labeled for WindowSample {
    fn label(&self) -> u8 {
        self.label
    }
}

/// Reduction weights, intercept and smoothing pre-parameter of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub w: Vec<f64>,
    pub b: f64,
    /// Unconstrained; the filter uses `k = sigmoid(kappa)`.
    pub kappa: f64,
}

impl ChannelParams {
    pub fn k(&self) -> f64 {
        sigmoid(self.kappa)
    }
}

/// All trainable parameters. Also used as the gradient record.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub m: usize,
    pub s: usize,
    pub c: f64,
    pub d: f64,
    pub channels: Vec<ChannelParams>,
    pub u: Vec<f64>,
    pub v: f64,
}

impl NetworkParams {
    /// All-zero parameters (including `kappa = 0`, i.e. `k = 0.5`).
    pub fn zeros(m: usize, s: usize, n_channels: usize) -> Self {
        Self {
            m,
            s,
            c: 0.0,
            d: 0.0,
            channels: vec![
                ChannelParams {
                    w: vec![0.0; m],
                    b: 0.0,
                    kappa: 0.0,
                };
                n_channels
            ],
            u: vec![0.0; n_channels],
            v: 0.0,
        }
    }

    /// Random initialization that keeps every sigmoid unsaturated.
    ///
    /// `c ~ U(0.5, 1.5)`, `d ~ U(-1, 1)`, `w ~ U(-0.5, 0.5)`, `b = 0`,
    /// `kappa = 2` (`k ~ 0.88`), `u ~ U(-0.5, 0.5)`, `v = 0`. The splitting
    /// layer is meant to see payments already divided by the payment scale.
    pub fn init<R: Rng + ?Sized>(m: usize, s: usize, n_channels: usize, rng: &mut R) -> Self {
        let c = rng.gen_range(0.5..1.5);
        let d = rng.gen_range(-1.0..1.0);
        let channels = (0..n_channels)
            .map(|_| ChannelParams {
                w: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                b: 0.0,
                kappa: 2.0,
            })
            .collect();
        let u = (0..n_channels).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self { m, s, c, d, channels, u, v: 0.0 }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Smoothing parameter of each channel.
    pub fn smoothing(&self) -> Vec<f64> {
        self.channels.iter().map(ChannelParams::k).collect()
    }

    /// Sets `kappa` so that the channel's smoothing equals `k` (in (0,1)).
    pub fn set_smoothing(&mut self, channel: usize, k: f64) -> Result<()> {
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::InvalidParameter(format!("k = {k} must lie in (0, 1)")));
        }
        self.channels[channel].kappa = logit(k);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.s == 0 || self.channels.is_empty() {
            return Err(Error::Config("network needs m, s and C all positive".into()));
        }
        if self.u.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "head has {} weights for {} channels",
                self.u.len(),
                self.channels.len()
            )));
        }
        if let Some(f) = self.channels.iter().position(|ch| ch.w.len() != self.m) {
            return Err(Error::Config(format!(
                "channel {f} has {} weights, expected m = {}",
                self.channels[f].w.len(),
                self.m
            )));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &WindowSample) -> Result<()> {
        if sample.m != self.m || sample.s != self.s {
            return Err(Error::Config(format!(
                "sample is {}x{} but the network expects {}x{}",
                sample.m, sample.s, self.m, self.s
            )));
        }
        Ok(())
    }

    /// Probability that the sample's label is 1.
    pub fn forward(&self, sample: &WindowSample) -> Result<f64> {
        self.check_sample(sample)?;
        Ok(self.prob(sample))
    }

    fn prob(&self, sample: &WindowSample) -> f64 {
        let split = self.split(sample);
        let mut reduced = vec![0.0; self.s];
        let z: Vec<f64> = self
            .channels
            .iter()
            .map(|ch| {
                self.reduce(ch, &split, &mut reduced);
                filters::accumulate(&reduced, ch.k()).value()
            })
            .collect();
        sigmoid(self.head_logit(&z))
    }

    /// `v + sum_f u_f z_f`, with the terms added in sorted order so the result
    /// does not depend on how channels are numbered.
    fn head_logit(&self, z: &[f64]) -> f64 {
        let mut terms: Vec<f64> = self.u.iter().zip(z).map(|(u, z)| u * z).collect();
        terms.sort_by(f64::total_cmp);
        self.v + terms.iter().sum::<f64>()
    }

    /// Splitting layer output, row-major `m x s`.
    fn split(&self, sample: &WindowSample) -> Vec<f64> {
        sample
            .payments
            .iter()
            .map(|x| sigmoid(self.c * x + self.d))
            .collect()
    }

    fn reduce(&self, ch: &ChannelParams, split: &[f64], out: &mut [f64]) {
        let s = self.s;
        for (t, r) in out.iter_mut().enumerate() {
            let a: f64 = ch
                .w
                .iter()
                .enumerate()
                .map(|(j, w)| w * split[j * s + t])
                .sum();
            *r = sigmoid(a + ch.b);
        }
    }

    /// Reduced per-period series of one channel, oldest first.
    pub fn reduced_series(&self, sample: &WindowSample, channel: usize) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let mut out = vec![0.0; self.s];
        self.reduce(&self.channels[channel], &self.split(sample), &mut out);
        Ok(out)
    }

    /// Mean cross-entropy over the batch plus `lambda * |u|_1`.
    pub fn loss(&self, batch: &[WindowSample], lambda: f64) -> Result<f64> {
        let refs = self.checked_batch(batch, lambda)?;
        Ok(self.batch_loss(&refs, lambda))
    }

    /// Exact gradient of [`NetworkParams::loss`], shaped like the parameters.
    pub fn gradient(&self, batch: &[WindowSample], lambda: f64) -> Result<NetworkParams> {
        let refs = self.checked_batch(batch, lambda)?;
        let mut g = self.clone();
        g.assign(&self.batch_gradient(&refs, lambda));
        Ok(g)
    }

    fn checked_batch<'a>(&self, batch: &'a [WindowSample], lambda: f64) -> Result<Vec<&'a WindowSample>> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
        }
        self.validate()?;
        batch.iter().try_for_each(|s| self.check_sample(s))?;
        Ok(batch.iter().collect())
    }

    /// Labels predicted at the given probability threshold.
    pub fn predict_batch(&self, samples: &[WindowSample], threshold: f64) -> Result<Vec<u8>> {
        samples
            .iter()
            .map(|s| self.forward(s).map(|p| u8::from(p >= threshold)))
            .collect()
    }

    fn l1(&self) -> f64 {
        self.u.iter().map(|u| u.abs()).sum()
    }

    /// Adds the gradient of one sample's cross-entropy, scaled by `weight`.
    fn accumulate_gradient(&self, sample: &WindowSample, weight: f64, grad: &mut NetworkParams) {
        let s = self.s;
        let m = self.m;
        let split = self.split(sample);
        let reduced: Vec<Vec<f64>> = self
            .channels
            .iter()
            .map(|ch| {
                let mut r = vec![0.0; s];
                self.reduce(ch, &split, &mut r);
                r
            })
            .collect();
        let z: Vec<f64> = reduced
            .iter()
            .zip(&self.channels)
            .map(|(r, ch)| filters::accumulate(r, ch.k()).value())
            .collect();
        let p = sigmoid(self.head_logit(&z));
        let g_logit = weight * (p - f64::from(sample.label));

        grad.v += g_logit;
        let mut g_split = vec![0.0; m * s];
        let mut g_r = vec![0.0; s];
        for (f, ch) in self.channels.iter().enumerate() {
            grad.u[f] += g_logit * z[f];
            let k = ch.k();
            let g_k = filters::filter_backward(&reduced[f], k, g_logit * self.u[f], &mut g_r);
            let gch = &mut grad.channels[f];
            gch.kappa += g_k * k * (1.0 - k);
            for t in 0..s {
                let r = reduced[f][t];
                let g_a = g_r[t] * r * (1.0 - r);
                gch.b += g_a;
                for j in 0..m {
                    gch.w[j] += g_a * split[j * s + t];
                    g_split[j * s + t] += g_a * ch.w[j];
                }
            }
        }
        for ((h, g), x) in split.iter().zip(&g_split).zip(&sample.payments) {
            let g_pre = g * h * (1.0 - h);
            grad.c += g_pre * x;
            grad.d += g_pre;
        }
    }

    /// Layer-by-layer reading of the fitted parameters.
    pub fn interpret(&self, feature_names: &[String]) -> Result<InterpretationReport> {
        self.interpret_with_tolerance(feature_names, ACTIVE_TOLERANCE)
    }

    pub fn interpret_with_tolerance(
        &self,
        feature_names: &[String],
        tolerance: f64,
    ) -> Result<InterpretationReport> {
        if feature_names.len() != self.m {
            return Err(Error::InvalidInput(format!(
                "{} feature names for m = {}",
                feature_names.len(),
                self.m
            )));
        }
        let splitting_threshold = (self.c != 0.0).then(|| -self.d / self.c);
        let channels = self
            .channels
            .iter()
            .zip(&self.u)
            .enumerate()
            .map(|(index, (ch, &u))| {
                let mut weights: Vec<(String, f64)> =
                    feature_names.iter().cloned().zip(ch.w.iter().copied()).collect();
                weights.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
                let positive = weights.iter().filter(|(_, w)| *w > 0.0).map(|(n, _)| n.clone()).collect();
                let negative = weights.iter().filter(|(_, w)| *w < 0.0).map(|(n, _)| n.clone()).collect();
                ChannelReport {
                    index,
                    weights,
                    positive,
                    negative,
                    intercept: ch.b,
                    smoothing: ch.k(),
                    head_weight: u,
                }
            })
            .collect();
        let active_channels = self
            .u
            .iter()
            .enumerate()
            .filter(|(_, u)| u.abs() > tolerance)
            .map(|(f, _)| f)
            .collect();
        Ok(InterpretationReport {
            c: self.c,
            d: self.d,
            splitting_threshold,
            channels,
            head_intercept: self.v,
            active_channels,
        })
    }

    /// Versioned plain-text form; see [`NetworkParams::from_text`].
    pub fn to_text(&self) -> String {
        let mut doc = KeyValueDoc::new();
        doc.push("version", FORMAT_VERSION);
        doc.push("m", self.m);
        doc.push("s", self.s);
        doc.push("C", self.n_channels());
        doc.push("c", self.c);
        doc.push("d", self.d);
        for (f, ch) in self.channels.iter().enumerate() {
            doc.push_array(format!("channel.{f}.w"), &ch.w);
            doc.push(format!("channel.{f}.b"), ch.b);
            doc.push(format!("channel.{f}.kappa"), ch.kappa);
        }
        doc.push_array("u", &self.u);
        doc.push("v", self.v);
        doc.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_doc(&KeyValueDoc::parse(text)?)
    }

    /// Reads the plain-text form. A channel may give `k` instead of `kappa`.
    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let version: u32 = doc.require("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model version {version}")));
        }
        let m: usize = doc.require("m")?;
        let s: usize = doc.require("s")?;
        let n: usize = doc.require("C")?;
        let mut known: Vec<String> = ["version", "m", "s", "C", "c", "d", "u", "v"]
            .iter()
            .map(|k| k.to_string())
            .collect();
        let channels = (0..n)
            .map(|f| {
                let key = |name: &str| format!("channel.{f}.{name}");
                known.extend(["w", "b", "kappa", "k"].map(key));
                let kappa = match (doc.get::<f64>(&key("kappa"))?, doc.get::<f64>(&key("k"))?) {
                    (Some(kappa), None) => kappa,
                    (None, Some(k)) if k > 0.0 && k < 1.0 => logit(k),
                    (None, Some(k)) => {
                        return Err(Error::InvalidParameter(format!("channel {f}: k = {k} must lie in (0, 1)")))
                    }
                    _ => return Err(Error::Config(format!("channel {f} needs exactly one of kappa, k"))),
                };
                Ok(ChannelParams {
                    w: doc.require_array(&key("w"))?,
                    b: doc.require(&key("b"))?,
                    kappa,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        doc.reject_unknown(&known)?;
        let params = Self {
            m,
            s,
            c: doc.require("c")?,
            d: doc.require("d")?,
            channels,
            u: doc.require_array("u")?,
            v: doc.require("v")?,
        };
        params.validate()?;
        Ok(params)
    }
}

impl Model for NetworkParams {
    type Sample = WindowSample;

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 + self.channels.len() * (self.m + 3) + 1);
        out.push(self.c);
        out.push(self.d);
        for ch in &self.channels {
            out.extend_from_slice(&ch.w);
            out.push(ch.b);
            out.push(ch.kappa);
        }
        out.extend_from_slice(&self.u);
        out.push(self.v);
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("flat parameter vector too short");
        self.c = next();
        self.d = next();
        for ch in &mut self.channels {
            for w in &mut ch.w {
                *w = next();
            }
            ch.b = next();
            ch.kappa = next();
        }
        for u in &mut self.u {
            *u = next();
        }
        self.v = next();
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = vec![ParamGroup::new("c", vec![0]), ParamGroup::new("d", vec![1])];
        let (mut w, mut b, mut kappa) = (Vec::new(), Vec::new(), Vec::new());
        let mut i = 2;
        for _ in &self.channels {
            w.extend(i..i + self.m);
            b.push(i + self.m);
            kappa.push(i + self.m + 1);
            i += self.m + 2;
        }
        let n = self.channels.len();
        groups.push(ParamGroup::new("w", w));
        groups.push(ParamGroup::new("b", b));
        groups.push(ParamGroup::new("kappa", kappa));
        groups.push(ParamGroup::new("u", (i..i + n).collect()));
        groups.push(ParamGroup::new("v", vec![i + n]));
        groups
    }

    fn predict_proba(&self, sample: &WindowSample) -> f64 {
        self.prob(sample)
    }

    fn batch_loss(&self, batch: &[&WindowSample], lambda: f64) -> f64 {
        let ce: f64 = batch
            .iter()
            .map(|s| cross_entropy(self.prob(s), s.label))
            .sum();
        ce / batch.len() as f64 + lambda * self.l1()
    }

    fn batch_gradient(&self, batch: &[&WindowSample], lambda: f64) -> Vec<f64> {
        let mut grad = Self::zeros(self.m, self.s, self.channels.len());
        let weight = 1.0 / batch.len() as f64;
        for s in batch {
            self.accumulate_gradient(s, weight, &mut grad);
        }
        for (g, u) in grad.u.iter_mut().zip(&self.u) {
            *g += lambda * sign0(*u);
        }
        grad.flatten()
    }
}

/// Reading of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub index: usize,
    /// Named reduction weights, largest magnitude first.
    pub weights: Vec<(String, f64)>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub intercept: f64,
    pub smoothing: f64,
    pub head_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretationReport {
    pub c: f64,
    pub d: f64,
    /// Payment amount where the splitting sigmoid crosses 1/2; `None` when `c = 0`.
    pub splitting_threshold: Option<f64>,
    pub channels: Vec<ChannelReport>,
    pub head_intercept: f64,
    pub active_channels: Vec<usize>,
}

impl fmt::Display for InterpretationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Splitting layer: sigmoid(c * x + d), c = {:.4}, d = {:.4}", self.c, self.d)?;
        match self.splitting_threshold {
            Some(t) => writeln!(
                f,
                "  threshold -d/c = {t:.4}: amounts above it read as paid, below as not paid"
            )?,
            None => writeln!(f, "  threshold undefined (c = 0)")?,
        }
        for ch in &self.channels {
            writeln!(f, "Channel {}:", ch.index)?;
            writeln!(f, "  reduction weights (by magnitude):")?;
            for (name, w) in &ch.weights {
                writeln!(f, "    {name:<24} {w:+.4}")?;
            }
            writeln!(f, "  intercept b = {:.4}", ch.intercept)?;
            writeln!(f, "  positively weighted: {}", join_or_none(&ch.positive))?;
            writeln!(f, "  negatively weighted: {}", join_or_none(&ch.negative))?;
            writeln!(f, "  smoothing k = {}", ch.smoothing)?;
            writeln!(f, "  head weight u = {:+.4}", ch.head_weight)?;
        }
        writeln!(f, "Head intercept v = {:+.4}", self.head_intercept)?;
        let active: Vec<String> = self.active_channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "Active channels: {}", join_or_none(&active))
    }
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.join(", ")
    }
}

/// One insurance in the network-vs-logistic sign comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SignRow {
    pub name: String,
    pub network_weight: f64,
    pub logistic_coefficient: f64,
    /// Opposite signs agree: the logistic inputs count periods of *not* paying.
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignComparison {
    pub rows: Vec<SignRow>,
    pub agreements: usize,
}

/// Compares channel 0's reduction weights with logistic coefficients fitted on
/// the not-pay run-length features of the same insurances.
pub fn compare_interpretations(
    params: &NetworkParams,
    feature_names: &[String],
    logistic_coefficients: &[(String, f64)],
) -> Result<SignComparison> {
    if feature_names.len() != params.m || logistic_coefficients.len() != params.m {
        return Err(Error::InvalidInput(format!(
            "expected {} names and coefficients, got {} and {}",
            params.m,
            feature_names.len(),
            logistic_coefficients.len()
        )));
    }
    let channel = params
        .channels
        .first()
        .ok_or_else(|| Error::InvalidInput("network has no channels".into()))?;
    let rows = feature_names
        .iter()
        .zip(&channel.w)
        .map(|(name, &w)| {
            let beta = logistic_coefficients
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| *b)
                .ok_or_else(|| Error::InvalidInput(format!("no logistic coefficient named `{name}`")))?;
            Ok(SignRow {
                name: name.clone(),
                network_weight: w,
                logistic_coefficient: beta,
                agrees: w * beta < 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let agreements = rows.iter().filter(|r| r.agrees).count();
    Ok(SignComparison { rows, agreements })
}

impl fmt::Display for SignComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>10}  opposite", "insurance", "network w", "logistic")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>+10.4} {:>+10.4}  {}",
                r.name,
                r.network_weight,
                r.logistic_coefficient,
                if r.agrees { "yes" } else { "no" }
            )?;
        }
        writeln!(f, "agreeing rows: {}/{}", self.agreements, self.rows.len())
    }
}
