//! Point and probabilistic scores. CRPS and SCRPS are negatively oriented:
//! smaller is better.

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf};
use std::f64::consts::PI;

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InsufficientData("cannot score an empty vector".into()));
    }
    if pred.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} observations", pred.len(), obs.len())));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    let s: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    let s: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum();
    Ok(s / pred.len() as f64)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("predictive sd must be positive, got {sigma}")));
    }
    Ok(())
}

/// `E|X − y|` for `X ~ N(μ, σ²)`.
fn abs_moment(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z))
}

/// CRPS of `N(μ, σ²)` at `y`: `σ [z (2Φ(z) − 1) + 2φ(z) − 1/√π]`.
pub fn crps_gauss(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(abs_moment(mu, sigma, y) - sigma / PI.sqrt())
}

/// SCRPS of `N(μ, σ²)` at `y`: `E|X − y| / E|X − X'| + ½ log E|X − X'|`
/// with `E|X − X'| = 2σ/√π`.
pub fn scrps_gauss(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let spread = 2.0 * sigma / PI.sqrt();
    Ok(abs_moment(mu, sigma, y) / spread + 0.5 * spread.ln())
}

/// `M(μ, σ²) = E|Z|` for `Z ~ N(μ, σ²)`: `2σ φ(μ/σ) + μ (2Φ(μ/σ) − 1)`.
pub fn abs_normal_mean(mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mu.abs();
    }
    let s = var.sqrt();
    let z = mu / s;
    2.0 * s * norm_pdf(z) + mu * (2.0 * norm_cdf(z) - 1.0)
}

fn check_draws(first: &[(f64, f64)], second: &[(f64, f64)]) -> Result<()> {
    if first.len() != second.len() {
        return Err(Error::DimensionMismatch("the two half-streams must have equal length".into()));
    }
    if first.len() < 2 {
        return Err(Error::InsufficientData("at least two paired mixture draws are required".into()));
    }
    if first.iter().chain(second).any(|&(_, v)| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("mixture variances must be finite and non-negative".into()));
    }
    Ok(())
}

/// Per-draw terms `M(μ₁ − y, σ₁²)` and `M(μ₁ − μ₂, σ₁² + σ₂²)` for a
/// normal variance mixture given as `(mean, variance)` pairs from two
/// independent half-streams, paired by index.
pub fn rb_terms(first: &[(f64, f64)], second: &[(f64, f64)], y: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_draws(first, second)?;
    let a = first.iter().map(|&(m, v)| abs_normal_mean(m - y, v)).collect();
    let b = first
        .iter()
        .zip(second)
        .map(|(&(m1, v1), &(m2, v2))| abs_normal_mean(m1 - m2, v1 + v2))
        .collect();
    Ok((a, b))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Rao–Blackwellized CRPS of a normal variance mixture.
pub fn crps_rb(first: &[(f64, f64)], second: &[(f64, f64)], y: f64) -> Result<f64> {
    let (a, b) = rb_terms(first, second, y)?;
    Ok(mean(&a) - 0.5 * mean(&b))
}

/// Rao–Blackwellized SCRPS of a normal variance mixture.
pub fn scrps_rb(first: &[(f64, f64)], second: &[(f64, f64)], y: f64) -> Result<f64> {
    let (a, b) = rb_terms(first, second, y)?;
    let spread = mean(&b);
    Ok(mean(&a) / spread + 0.5 * spread.ln())
}

/// Splits mixture components into two half-streams (even and odd positions).
pub fn split_streams(draws: &[(f64, f64)]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let half = draws.len() / 2;
    let first = draws.iter().step_by(2).take(half).copied().collect();
    let second = draws.iter().skip(1).step_by(2).take(half).copied().collect();
    (first, second)
}
