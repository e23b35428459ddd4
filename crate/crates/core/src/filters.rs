//! Persistent change filters.
//!
//! All four variants measure how long a `[0,1]`-valued series has persistently
//! sat high at its end:
//!
//! - [`naive_persistent_change`]: length of the terminal run of ones in a binary series.
//! - [`continuous_persistent_change`]: `p_T` with `p_1 = x_1`, `p_{t+1} = x_{t+1} + x_{t+1} p_t`.
//!   Equals the naive count on binary input.
//! - [`symmetric_persistent_change`]: `p_T - q_T`, where `q` runs the same recursion on `1 - x`.
//! - [`smooth_persistent_change`]: the trainable filter. With smoothing `k`,
//!
//!   ```text
//!   p_{t+1} = (1 + k (x_{t+1} - 1)) p_t + x_{t+1}
//!   q_{t+1} = (1 - k x_{t+1}) q_t + (1 - x_{t+1})
//!   ```
//!
//!   and the output is `p_T - q_T`. At `k = 1` it reduces to the symmetric variant;
//!   smaller `k` weakens how much a single low value clears the accumulated run.

use crate::error::{Error, Result};

/// A series of activation levels in `[0,1]`, length at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow(Vec<f64>);

impl TimeSeriesWindow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("time series must not be empty".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidInput(format!(
                "value {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise complement `1 - x`.
    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|v| 1.0 - v).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for TimeSeriesWindow {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Smoothing parameter `k` in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::InvalidParameter(format!(
                "smoothing parameter k = {k} is outside [0, 1]"
            )));
        }
        Ok(Self(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Jump (`p`) and drop (`q`) accumulators after some prefix of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterAccumulators {
    pub p: f64,
    pub q: f64,
}

impl FilterAccumulators {
    #[inline]
    fn start(x: f64) -> Self {
        Self { p: x, q: 1.0 - x }
    }

    #[inline]
    fn advance(self, x: f64, k: f64) -> Self {
        Self {
            p: (1.0 + k * (x - 1.0)) * self.p + x,
            q: (1.0 - k * x) * self.q + (1.0 - x),
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.p - self.q
    }
}

/// Length of the run of ones ending at the last element of a binary series.
///
/// Non-binary entries are rejected; use [`continuous_persistent_change`] for
/// continuous input.
pub fn naive_persistent_change(x: &TimeSeriesWindow) -> Result<usize> {
    if let Some((i, v)) = x
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| **v != 0.0 && **v != 1.0)
    {
        return Err(Error::InvalidInput(format!(
            "naive persistent change needs binary input; index {i} holds {v}"
        )));
    }
    Ok(terminal_run(x.as_slice().iter().map(|v| *v == 1.0)))
}

/// Terminal run length of a boolean sequence.
pub(crate) fn terminal_run(flags: impl DoubleEndedIterator<Item = bool>) -> usize {
    flags.rev().take_while(|b| *b).count()
}

pub fn continuous_persistent_change(x: &TimeSeriesWindow) -> f64 {
    jump_accumulator(x.as_slice(), 1.0)
}

pub fn symmetric_persistent_change(x: &TimeSeriesWindow) -> f64 {
    accumulate(x.as_slice(), 1.0).value()
}

/// The persistent change filter `p_T - q_T` with smoothing `k`.
pub fn smooth_persistent_change(x: &TimeSeriesWindow, k: SmoothingParam) -> f64 {
    accumulate(x.as_slice(), k.value()).value()
}

/// Jump accumulator `p_T` of the smoothed recursion alone.
pub fn jump_accumulator(x: &[f64], k: f64) -> f64 {
    let mut p = x[0];
    for &v in &x[1..] {
        p = (1.0 + k * (v - 1.0)) * p + v;
    }
    p
}

/// Running filter values `z_t` for every prefix of the series, in one pass.
pub fn filter_series(x: &[f64], k: SmoothingParam) -> Result<Vec<f64>> {
    let window = TimeSeriesWindow::new(x.to_vec())?;
    let k = k.value();
    let values = window.as_slice();
    let mut acc = FilterAccumulators::start(values[0]);
    let mut out = Vec::with_capacity(values.len());
    out.push(acc.value());
    for &v in &values[1..] {
        acc = acc.advance(v, k);
        out.push(acc.value());
    }
    Ok(out)
}

pub(crate) fn accumulate(x: &[f64], k: f64) -> FilterAccumulators {
    let mut acc = FilterAccumulators::start(x[0]);
    for &v in &x[1..] {
        acc = acc.advance(v, k);
    }
    acc
}

/// Gradient of `upstream * D(x, k)` with respect to the series and to `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGradient {
    pub grad_x: Vec<f64>,
    pub grad_k: f64,
}

/// Reverse-mode gradient of the smooth filter.
///
/// The forward accumulators are stored, then the adjoints of `p` and `q` are
/// carried backwards through the per-step multipliers `1 + k (x - 1)` and
/// `1 - k x`. The polynomial in `k` is differentiable on all of `[0,1]`.
pub fn smooth_filter_gradient(
    x: &TimeSeriesWindow,
    k: SmoothingParam,
    upstream: f64,
) -> FilterGradient {
    let mut grad_x = vec![0.0; x.len()];
    let grad_k = filter_backward(x.as_slice(), k.value(), upstream, &mut grad_x);
    FilterGradient { grad_x, grad_k }
}

/// Unchecked forward + backward pass used by the network.
///
/// Writes `upstream * dD/dx_t` into `grad_x` and returns `upstream * dD/dk`.
pub(crate) fn filter_backward(x: &[f64], k: f64, upstream: f64, grad_x: &mut [f64]) -> f64 {
    let n = x.len();
    debug_assert_eq!(grad_x.len(), n);
    // Forward: store accumulators for every prefix.
    let mut acc = Vec::with_capacity(n);
    let mut cur = FilterAccumulators::start(x[0]);
    acc.push(cur);
    for &v in &x[1..] {
        cur = cur.advance(v, k);
        acc.push(cur);
    }

    let mut gp = upstream;
    let mut gq = -upstream;
    let mut grad_k = 0.0;
    for t in (1..n).rev() {
        let xt = x[t];
        let prev = acc[t - 1];
        grad_x[t] = gp * (k * prev.p + 1.0) - gq * (k * prev.q + 1.0);
        grad_k += gp * (xt - 1.0) * prev.p - gq * xt * prev.q;
        gp *= 1.0 + k * (xt - 1.0);
        gq *= 1.0 - k * xt;
    }
    grad_x[0] = gp - gq;
    grad_k
}
