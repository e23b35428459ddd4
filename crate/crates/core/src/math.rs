/// Logistic sigmoid, evaluated without overflow for large |x|.
///
/// Negative inputs go through `1 - sigmoid(-x)`, so `sigmoid(-x) == 1 - sigmoid(x)`
/// holds bit for bit. Outputs below about 1e-16 round to 0.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Subgradient of |x| with 0 chosen at the kink.
#[inline]
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of a predicted probability against a 0/1 label.
#[inline]
pub fn cross_entropy(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}
