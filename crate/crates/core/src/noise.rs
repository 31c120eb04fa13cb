//! Replicate aggregation and the noise-variance model.
//!
//! The noise GP models `g = −σ²` from negated unbiased sample variances;
//! its posterior gives the upper bound `U(x) = −μ'(x) + β'σ'(x)` used to
//! choose replication counts.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::gp::GpPosterior;

/// Relative floor applied to the noise upper bound.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-6;

/// Replicates at one input reduced to their mean and negated unbiased
/// variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedObservation {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// `−(1/(n−1)) Σ (v − mean)²`, absent for a single replicate.
    pub neg_variance: Option<f64>,
    pub iteration: usize,
    pub slot: usize,
}

impl AggregatedObservation {
    pub fn new(x: Vec<f64>, index: Option<usize>, values: Vec<f64>, iteration: usize, slot: usize) -> Result<Self> {
        let (mean, neg_variance) = aggregate_replicates(&values)?;
        Ok(Self {
            x,
            index,
            values,
            mean,
            neg_variance,
            iteration,
            slot,
        })
    }

    pub fn replications(&self) -> usize {
        self.values.len()
    }

    /// Unbiased sample variance, when defined.
    pub fn variance(&self) -> Option<f64> {
        self.neg_variance.map(|v| -v)
    }
}

/// Mean and negated unbiased variance (two-pass).
pub fn aggregate_replicates(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::input("a replicate set needs at least one value"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("replicate {i} is not finite")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, None));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, Some(-(ss / (n - 1.0)))))
}

/// `max(−μ'(x) + β'σ'(x), floor)`.
pub fn variance_upper_bound(noise_posterior: &GpPosterior, x: &[f64], beta_noise: f64, floor: f64) -> Result<f64> {
    Ok(raw_variance_upper_bound(noise_posterior, x, beta_noise)?.max(floor))
}

/// The bound before flooring; may be negative early on.
pub fn raw_variance_upper_bound(noise_posterior: &GpPosterior, x: &[f64], beta_noise: f64) -> Result<f64> {
    if !(beta_noise.is_finite() && beta_noise >= 0.0) {
        return Err(Error::input("beta_noise must be finite and non-negative"));
    }
    let (mean, var) = noise_posterior.posterior_at(x)?;
    Ok(-mean + beta_noise * var.sqrt())
}

/// Floor for the upper bound relative to the current `σ²_max` estimate.
pub fn variance_floor(sigma2_max: f64) -> f64 {
    VARIANCE_FLOOR_FRACTION * sigma2_max
}

/// `η`-quantile of the chi-squared distribution with `df` degrees of
/// freedom, by bisection on the regularized lower incomplete gamma.
pub fn chi_squared_quantile(df: f64, eta: f64) -> Result<f64> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::input("degrees of freedom must be positive"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::input("quantile level must lie in (0, 1)"));
    }
    let cdf = |x: f64| gamma_lr(0.5 * df, 0.5 * x);
    let mut hi = df.max(1.0);
    while cdf(hi) < eta {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < eta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bounds on the empirical-variance noise `ε' = s² − σ²` from chi-squared
/// quantiles with `n_min − 1` degrees of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianBound {
    pub n_min: usize,
    pub alpha: f64,
    pub sigma2_min: f64,
    pub sigma2_max: f64,
    pub lower: f64,
    pub upper: f64,
    pub radius: f64,
}

impl SubGaussianBound {
    pub fn contains(&self, eps: f64) -> bool {
        eps >= self.lower && eps <= self.upper
    }
}

/// `L = σ²_min (χ²_{n−1,α/2}/(n−1) − 1)`, `U = σ²_max (χ²_{n−1,1−α/2}/(n−1) − 1)`,
/// `R' = (U − L)/2`.
pub fn sub_gaussian_radius(n_min: usize, alpha: f64, sigma2_min: f64, sigma2_max: f64) -> Result<SubGaussianBound> {
    if n_min < 2 {
        return Err(Error::input("n_min must be at least 2 for a variance estimate"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input("alpha must lie in (0, 1)"));
    }
    if !(sigma2_min >= 0.0 && sigma2_min <= sigma2_max && sigma2_max.is_finite()) {
        return Err(Error::input("need 0 <= sigma2_min <= sigma2_max"));
    }
    let df = (n_min - 1) as f64;
    let q_lo = chi_squared_quantile(df, alpha / 2.0)?;
    let q_hi = chi_squared_quantile(df, 1.0 - alpha / 2.0)?;
    let lower = sigma2_min * (q_lo / df - 1.0);
    let upper = sigma2_max * (q_hi / df - 1.0);
    Ok(SubGaussianBound {
        n_min,
        alpha,
        sigma2_min,
        sigma2_max,
        lower,
        upper,
        radius: 0.5 * (upper - lower),
    })
}

/// Largest observed sample variance; `prior_guess` until one exists.
pub fn sigma_max_estimate(history: &[AggregatedObservation], prior_guess: f64) -> Result<f64> {
    if !(prior_guess > 0.0 && prior_guess.is_finite()) {
        return Err(Error::input("prior_guess must be positive"));
    }
    let observed = history
        .iter()
        .filter_map(AggregatedObservation::variance)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if observed > 0.0 { observed } else { prior_guess })
}
