//! Deterministic numeric kernels: dense matrices, stable softmax and
//! log-sum-exp, and a seeded PRNG with derived sub-streams.
//!
//! Everything here is `f64`; the loss identities downstream are asserted to
//! 1e-8 and would not survive single precision.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::PrngStream;

use thiserror::Error;

/// Floor applied to every log argument. Complementary probabilities can reach
/// exact zero under one-hot transition rows.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("non-finite value in input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Numerically stable softmax: subtracts the max before exponentiating, so
/// large logits cannot overflow.
pub fn softmax_stable(logits: &[f64]) -> Result<Vec<f64>, NumericError> {
    if logits.is_empty() {
        return Err(NumericError::Empty);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(&mut out, logits);
    Ok(out)
}

/// Infallible softmax used on the training hot path. Inputs must be finite;
/// the checked wrapper is [`softmax_stable`].
pub(crate) fn softmax_into(out: &mut [f64], logits: &[f64]) {
    debug_assert_eq!(out.len(), logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable `log(sum(exp(v_i)))` via max-shift.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, NumericError> {
    if values.is_empty() {
        return Err(NumericError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `ln(max(x, LOG_FLOOR))` — every log taken in this crate goes through here.
#[inline]
pub fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Logistic sigmoid, stable on both tails.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: direct exp/normalize without the max shift. Only
    // valid for small logits, which is exactly where we use it.
    fn softmax_naive(logits: &[f64]) -> Vec<f64> {
        let sum: f64 = logits.iter().map(|&z| z.exp()).sum();
        logits.iter().map(|&z| z.exp() / sum).collect()
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax_stable(&[0.0, 0.0, 0.0]).unwrap();
        for &v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_no_overflow_on_large_logits() {
        let p = softmax_stable(&[1000.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-300 && p[2] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_oracle() {
        let logits = [2.0_f64.ln(), 0.0, 0.0];
        let p = softmax_stable(&logits).unwrap();
        let q = softmax_naive(&logits);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!((p[2] - 0.25).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert_eq!(softmax_stable(&[f64::NAN, 0.0]), Err(NumericError::NonFinite));
        assert_eq!(softmax_stable(&[f64::INFINITY, 0.0]), Err(NumericError::NonFinite));
        assert_eq!(softmax_stable(&[]), Err(NumericError::Empty));
    }

    #[test]
    fn log_sum_exp_basics() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2.0_f64.ln()).abs() < 1e-12);
        assert!((log_sum_exp(&[5.0]).unwrap() - 5.0).abs() < 1e-12);
        // Max-shift keeps the huge case exact: lse(1000,1000) = 1000 + ln 2.
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[f64::NAN]), Err(NumericError::NonFinite));
    }

    #[test]
    fn sigmoid_tails() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
