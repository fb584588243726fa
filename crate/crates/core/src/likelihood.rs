//! Largest-extreme-value threshold law, censored log-likelihood, penalties
//! and the assembled objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposure::{cumulative_exposure, damage_rate, Dataset, EffectBasis, GroupedBeta, ModelParams};

/// Largest exponent kept for `(α/u)^{1/σ}`; beyond it the likelihood
/// saturates at a large finite value instead of overflowing.
const MAX_LOG_RATIO: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("zero exposure at event for unit {unit}")]
    ZeroExposure { unit: u32 },
    #[error("scale sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
}

/// Location `log α` and scale `σ` of the threshold distribution of `log U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevParams {
    pub log_alpha: f64,
    pub sigma: f64,
}

impl LevParams {
    pub fn new(alpha: f64, sigma: f64) -> Result<Self, LikelihoodError> {
        if !(sigma > 0.0) {
            return Err(LikelihoodError::NonPositiveSigma(sigma));
        }
        Ok(Self {
            log_alpha: alpha.ln(),
            sigma,
        })
    }
}

/// `Φ(x) = exp(-exp(-x))`.
pub fn lev_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// `φ(x) = exp(-x - exp(-x))`.
pub fn lev_pdf(x: f64) -> f64 {
    (-x - (-x).exp()).exp()
}

/// `z_p = -log(-log p)`.
pub fn lev_quantile(p: f64) -> f64 {
    -(-p.ln()).ln()
}

/// Log-likelihood contribution of one unit given its exposure and rate at the
/// event time.
///
/// Failed: `log u' - log σ - log u + log r - r`; censored: `log(1 - e^{-r})`,
/// with `r = (α/u)^{1/σ}` carried in log space.
pub fn unit_loglik(
    unit_id: u32,
    failed: bool,
    exposure: f64,
    rate: f64,
    lev: LevParams,
) -> Result<f64, LikelihoodError> {
    if !(exposure > 0.0) {
        return Err(LikelihoodError::ZeroExposure { unit: unit_id });
    }
    if !(lev.sigma > 0.0) {
        return Err(LikelihoodError::NonPositiveSigma(lev.sigma));
    }
    Ok(unit_loglik_unchecked(failed, exposure, rate, lev.log_alpha, lev.sigma))
}

/// [`unit_loglik`] without argument checks; a zero exposure yields `-∞`.
#[inline]
pub fn unit_loglik_unchecked(failed: bool, exposure: f64, rate: f64, log_alpha: f64, sigma: f64) -> f64 {
    let log_u = exposure.ln();
    let log_r = ((log_alpha - log_u) / sigma).min(MAX_LOG_RATIO);
    if failed {
        rate.ln() - sigma.ln() - log_u + log_r - log_r.exp()
    } else {
        log_one_minus_exp_neg(log_r)
    }
}

/// `log(1 - exp(-e^{s}))` without cancellation or underflow.
#[inline]
fn log_one_minus_exp_neg(log_r: f64) -> f64 {
    if log_r < -20.0 {
        // 1 - e^{-r} = r (1 - r/2 + ...)
        log_r - 0.5 * log_r.exp()
    } else {
        (-(-log_r.exp()).exp_m1()).ln()
    }
}

/// Sum of unit contributions, composed directly from the sensor histories.
pub fn total_loglik(data: &Dataset, basis: &EffectBasis, params: &ModelParams) -> Result<f64, LikelihoodError> {
    let lev = LevParams::new(params.alpha, params.sigma)?;
    data.units
        .iter()
        .map(|unit| {
            let u = cumulative_exposure(unit, basis, params).at_event();
            let rate = damage_rate(unit, basis, params, unit.len() - 1);
            unit_loglik(unit.unit_id, unit.failed, u, rate, lev)
        })
        .sum()
}

/// Tuning and weighting of the penalty terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    /// Per-group weights; `f64::INFINITY` pins a group at zero.
    pub weights: Vec<f64>,
    pub eta: f64,
}

impl PenaltyConfig {
    pub fn unweighted(lambda: f64, groups: usize, eta: f64) -> Self {
        Self {
            lambda,
            weights: vec![1.0; groups],
            eta,
        }
    }
}

/// `λ Σ_j ω_j ||β_j||₂` with `∞ · 0 = 0`; an infinite weight on a nonzero
/// group is infeasible and yields `+∞`.
pub fn group_penalty(beta: &GroupedBeta, weights: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let norm = beta.group_norm(j);
        if norm == 0.0 {
            continue;
        }
        if w.is_infinite() {
            return f64::INFINITY;
        }
        total += w * norm;
    }
    lambda * total
}

/// Squared penalty for one unit: `(α - u)²` for failures, `([u - α]_+)²` for
/// censored units.
#[inline]
pub fn anchor_term(failed: bool, exposure: f64, alpha: f64) -> f64 {
    if failed {
        (alpha - exposure).powi(2)
    } else {
        (exposure - alpha).max(0.0).powi(2)
    }
}

/// `η Σ_i [δ_i (α - u_i)² + (1 - δ_i)([u_i - α]_+)²]` over `(failed, u_i)` pairs.
pub fn anchor_penalty(events: impl IntoIterator<Item = (bool, f64)>, alpha: f64, eta: f64) -> f64 {
    eta * events
        .into_iter()
        .map(|(failed, u)| anchor_term(failed, u, alpha))
        .sum::<f64>()
}

/// Penalized negative log-likelihood with the anchor term.
pub fn objective(
    data: &Dataset,
    basis: &EffectBasis,
    params: &ModelParams,
    penalty: &PenaltyConfig,
) -> Result<f64, LikelihoodError> {
    let group = group_penalty(&params.beta, &penalty.weights, penalty.lambda);
    if group.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let events = data
        .units
        .iter()
        .map(|unit| (unit.failed, cumulative_exposure(unit, basis, params).at_event()));
    let anchor = anchor_penalty(events, params.alpha, penalty.eta);
    Ok(-total_loglik(data, basis, params)? + group + anchor)
}

/// `ω_j = ||β̃_j||₂^{-γ}`, or `∞` for an all-zero group.
pub fn adaptive_weights(beta_tilde: &GroupedBeta, gamma: f64) -> Vec<f64> {
    beta_tilde
        .group_norms()
        .into_iter()
        .map(|n| if n > 0.0 { n.powf(-gamma) } else { f64::INFINITY })
        .collect()
}
