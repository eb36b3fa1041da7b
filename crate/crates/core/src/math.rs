//! Scalar helpers shared by the loss modules.

/// Lower clamp applied to probabilities before taking a logarithm.
pub(crate) const PROB_CLAMP: f64 = 1e-7;

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a probability against a {0,1} target, with the
/// probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
///
/// Returns the loss and `d loss / d p`; the derivative is zero where the clamp
/// is active.
pub(crate) fn clamped_bce(target: f64, p: f64) -> (f64, f64) {
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let (q, active) = if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    };
    let loss = -(target * libm::log(q) + (1.0 - target) * libm::log(1.0 - q));
    let dp = if active {
        -target / q + (1.0 - target) / (1.0 - q)
    } else {
        0.0
    };
    (loss, dp)
}

/// Binary cross-entropy computed from a logit, `-(y log σ(x) + (1-y) log(1-σ(x)))`.
///
/// Uses `softplus` so large logits do not lose precision.
pub(crate) fn bce_with_logit(target: f64, x: f64) -> f64 {
    // -log σ(x) = softplus(-x), -log(1-σ(x)) = softplus(x)
    target * softplus(-x) + (1.0 - target) * softplus(x)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}
