//! Effective noise variance, replication counts and per-iteration budget
//! accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-input replication cap evolves over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NMaxPolicy {
    /// `⌊𝔹/2⌋` for the first half of the horizon, `𝔹` afterwards.
    #[default]
    Scheduled,
    /// `𝔹` in every iteration.
    Constant,
}

/// Which quantity the run optimizes; also selects the noise treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Known,
    #[default]
    Unknown,
    MeanVar,
}

/// `R² = κ σ²_max (√𝔹 + 1)/(𝔹 − 1)`.
///
/// Evaluated as `κ σ²_max/(√𝔹 − 1)`, the same value with one fewer
/// rounding, so perfect-square budgets give exact fractions.
pub fn effective_variance(kappa: f64, budget: usize, sigma2_max: f64) -> Result<f64> {
    if budget < 2 {
        return Err(Error::input(
            "budget must be at least 2 to derive an effective variance",
        ));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::input("kappa must be positive"));
    }
    if !(sigma2_max > 0.0 && sigma2_max.is_finite()) {
        return Err(Error::input("sigma2_max must be positive"));
    }
    Ok(kappa * sigma2_max / ((budget as f64).sqrt() - 1.0))
}

/// A replication count together with whether the cap bound it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replications {
    pub n: usize,
    /// The unclamped `⌈v/R²⌉` exceeded `n_max`.
    pub capped: bool,
}

/// `clamp(⌈v/R²⌉, n_min, n_max)`, reporting whether the cap was hit.
pub fn replications_for(variance: f64, r_squared: f64, n_min: usize, n_max: usize) -> Result<Replications> {
    if !(r_squared > 0.0 && r_squared.is_finite()) {
        return Err(Error::input("R² must be positive"));
    }
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::input("noise variance must be non-negative"));
    }
    if n_min == 0 || n_min > n_max {
        return Err(Error::input(format!(
            "need 1 <= n_min <= n_max, got {n_min} and {n_max}"
        )));
    }
    let mut ratio = (variance / r_squared).ceil();
    // the rounded quotient can land one below the true ceiling
    if variance / ratio.max(1.0) > r_squared {
        ratio += 1.0;
    }
    let capped = ratio > n_max as f64;
    let n = if capped { n_max } else { (ratio as usize).max(n_min) };
    Ok(Replications { n, capped })
}

/// Replications for a known noise variance `σ²(x)`.
pub fn replications_known(sigma2: f64, r_squared: f64, n_min: usize, n_max: usize) -> Result<usize> {
    replications_for(sigma2, r_squared, n_min, n_max).map(|r| r.n)
}

/// Replications for the (already floored) noise upper bound `U(x)`.
pub fn replications_unknown(upper: f64, r_squared: f64, n_min: usize, n_max: usize) -> Result<usize> {
    replications_for(upper, r_squared, n_min, n_max).map(|r| r.n)
}

/// Cap on replications of a single input at iteration `t` (1-based).
pub fn n_max_schedule(t: usize, horizon: usize, budget: usize, mode: Mode, policy: NMaxPolicy) -> Result<usize> {
    if t == 0 || t > horizon {
        return Err(Error::input(format!("iteration {t} outside 1..={horizon}")));
    }
    if mode == Mode::MeanVar || policy == NMaxPolicy::Constant {
        return Ok(budget);
    }
    Ok(if t <= horizon.div_ceil(2) { budget / 2 } else { budget })
}

/// Outcome of asking the ledger for `n` replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Allocation {
    Full {
        n: usize,
    },
    /// Only `now` replications fit; `carried` more come out of the next
    /// iteration and the current batch closes.
    Partial {
        now: usize,
        carried: usize,
    },
    Closed,
}

/// Replications still owed to an input that overflowed the previous batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deficit {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub requested: usize,
    pub remaining: usize,
}

/// Per-iteration budget bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    budget: usize,
    effective: usize,
    remaining: usize,
    deficit: Option<Deficit>,
    closed: bool,
}

impl BudgetLedger {
    pub fn new(budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::input("budget must be positive"));
        }
        Ok(Self {
            budget,
            effective: budget,
            remaining: budget,
            deficit: None,
            closed: false,
        })
    }

    /// Nominal per-iteration budget `𝔹`.
    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Budget available to fresh selections this iteration.
    pub fn effective(&self) -> usize {
        self.effective
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn consumed(&self) -> usize {
        self.effective - self.remaining
    }

    pub fn is_closed(&self) -> bool {
        self.closed || self.remaining == 0
    }

    /// Deficit recorded this iteration, owed at the start of the next.
    pub fn deficit(&self) -> Option<&Deficit> {
        self.deficit.as_ref()
    }

    /// Effective budget the next iteration will start with.
    pub fn next_effective(&self) -> usize {
        self.budget - self.deficit.as_ref().map_or(0, |d| d.remaining)
    }

    /// Resumes a ledger whose previous iteration left `owed` unfinished;
    /// fresh selections get `𝔹` minus the owed replications.
    pub fn resume(budget: usize, owed: Option<&Deficit>) -> Result<Self> {
        let mut ledger = Self::new(budget)?;
        if let Some(d) = owed {
            if d.remaining >= budget {
                return Err(Error::input("carried deficit must be smaller than the budget"));
            }
            ledger.effective = budget - d.remaining;
            ledger.remaining = ledger.effective;
        }
        Ok(ledger)
    }

    /// Forgets a recorded deficit; the overflowing input is dropped.
    pub fn drop_deficit(&mut self) -> Option<Deficit> {
        self.deficit.take()
    }

    /// Allocates `requested` replications to `x`.
    pub fn step(&mut self, x: &[f64], index: Option<usize>, requested: usize) -> Allocation {
        if self.is_closed() || requested == 0 {
            return Allocation::Closed;
        }
        if requested <= self.remaining {
            self.remaining -= requested;
            return Allocation::Full { n: requested };
        }
        let now = self.remaining;
        let carried = requested - now;
        self.remaining = 0;
        self.closed = true;
        self.deficit = Some(Deficit {
            x: x.to_vec(),
            index,
            requested,
            remaining: carried,
        });
        Allocation::Partial { now, carried }
    }

    /// Stops the current batch without allocating.
    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Opens the next iteration, returning the deficit it must settle first.
    pub fn advance(&mut self) -> Option<Deficit> {
        let owed = self.deficit.take();
        self.effective = self.budget - owed.as_ref().map_or(0, |d| d.remaining);
        self.remaining = self.effective;
        self.closed = false;
        owed
    }
}
