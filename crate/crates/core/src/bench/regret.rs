//! Batch regret metrics against exhaustive grid optima.

use serde::{Deserialize, Serialize};

use crate::bench::problem::SyntheticProblem;
use crate::error::{Error, Result};

/// One iteration of a regret trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretStep {
    /// Smallest gap within the iteration's batch.
    pub increment: f64,
    /// Running sum of increments.
    pub cumulative: f64,
    /// Running minimum of increments.
    pub simple: f64,
}

fn trace(batches: &[Vec<usize>], len: usize, gap: impl Fn(usize) -> f64) -> Result<Vec<RegretStep>> {
    let mut cumulative = 0.0;
    let mut simple = f64::INFINITY;
    batches
        .iter()
        .enumerate()
        .map(|(t, batch)| {
            if batch.is_empty() {
                return Err(Error::input(format!("iteration {} has an empty batch", t + 1)));
            }
            if let Some(&i) = batch.iter().find(|&&i| i >= len) {
                return Err(Error::input(format!("grid index {i} out of range")));
            }
            let increment = batch.iter().map(|&i| gap(i)).fold(f64::INFINITY, f64::min);
            cumulative += increment;
            simple = simple.min(increment);
            Ok(RegretStep {
                increment,
                cumulative,
                simple,
            })
        })
        .collect()
}

/// `R_T = Σ_t min_b [f(x*) − f(x_t^b)]` and `S_T = min_t min_b [...]`.
pub fn batch_simple_and_cumulative_regret(
    problem: &SyntheticProblem,
    batches: &[Vec<usize>],
) -> Result<Vec<RegretStep>> {
    let best = problem.f[problem.optimum()];
    trace(batches, problem.len(), |i| best - problem.f[i])
}

/// The same construction on `h_ω` with optimum `x*_ω`.
pub fn mean_variance_regret(problem: &SyntheticProblem, omega: f64, batches: &[Vec<usize>]) -> Result<Vec<RegretStep>> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::input("omega must lie in [0, 1]"));
    }
    let best = problem.h(omega, problem.mean_variance_optimum(omega));
    trace(batches, problem.len(), |i| best - problem.h(omega, i))
}
