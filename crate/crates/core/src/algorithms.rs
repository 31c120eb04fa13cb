//! Batch selection loops with adaptive replication, plus the fixed-replication
//! and sequential baselines they are compared against.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Initialization, KnownNoise};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::{optimize_hyperparameters, uncertainty_sampling, Dataset, GpPosterior, HyperOptions, KernelParams};
use crate::noise::{sigma_max_estimate, variance_floor, variance_upper_bound, AggregatedObservation};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sampler::{argmax, argmax_values, draw_feature_map, FeaturePosterior, Objective, SampledFunction, Weighted};
use crate::schedule::{effective_variance, n_max_schedule, replications_for, Allocation, BudgetLedger, Deficit, Mode};

/// Which selection rule drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Adaptive replication; the flavour follows `ExperimentConfig::mode`.
    BtsRed,
    /// Batch Thompson sampling with `⌊𝔹/n⌋` inputs of `n` replications each.
    FixedBatchTs {
        n: usize,
    },
    GpUcb {
        replications: usize,
    },
    GpTs {
        replications: usize,
    },
}

impl Strategy {
    pub fn label(&self, mode: Mode) -> String {
        match self {
            Strategy::BtsRed => match mode {
                Mode::Known => "bts_red_known".into(),
                Mode::Unknown => "bts_red_unknown".into(),
                Mode::MeanVar => "mean_var_bts_red".into(),
            },
            Strategy::FixedBatchTs { n } => format!("batch_ts_n{n}"),
            Strategy::GpUcb { replications } => format!("gp_ucb_n{replications}"),
            Strategy::GpTs { replications } => format!("gp_ts_n{replications}"),
        }
    }
}

/// Ground-truth noise variance available to the known-variance loop.
pub trait KnownVariance: Sync {
    fn variance(&self, x: &[f64], index: Option<usize>) -> Result<f64>;
    fn max_variance(&self) -> f64;
}

impl KnownVariance for KnownNoise {
    fn variance(&self, _x: &[f64], index: Option<usize>) -> Result<f64> {
        self.at(index)
    }

    fn max_variance(&self) -> f64 {
        self.max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    /// Newly selected and fully funded.
    Fresh,
    /// Newly selected but overflowing; the rest is owed next iteration.
    Partial,
    /// Settles the previous iteration's overflow.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    /// Normalized coordinates.
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    /// Replications to run now.
    pub n: usize,
    /// Replications the input needs in total.
    pub requested: usize,
    pub kind: SlotKind,
    /// Variance (known mode) or its upper bound that set `requested`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_bound: Option<f64>,
    /// `requested` was bound by `n_max`.
    #[serde(default)]
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProposal {
    pub iteration: usize,
    pub strategy: Strategy,
    /// Slots in selection order, a completion slot first when present.
    pub slots: Vec<Slot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    pub n_max: usize,
    /// Budget available to fresh selections after the previous deficit.
    pub effective_budget: usize,
    /// Overflow created by this batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carried: Option<Deficit>,
}

impl BatchProposal {
    pub fn budget_used(&self) -> usize {
        self.slots.iter().map(|s| s.n).sum()
    }

    /// Inputs chosen in this iteration (completions belong to the previous one).
    pub fn selected(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| s.kind != SlotKind::Completion)
    }
}

/// Replicates gathered for an overflowing input, waiting for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingReplicates {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub requested: usize,
    pub values: Vec<f64>,
    pub iteration: usize,
    pub slot: usize,
}

/// Everything needed to rebuild an [`AlgorithmState`] bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub iteration: usize,
    pub history: Vec<AggregatedObservation>,
    pub objective_kernel: KernelParams,
    pub noise_kernel: KernelParams,
    pub sigma2_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owed: Option<Deficit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingReplicates>,
}

#[derive(Debug, Clone)]
pub struct AlgorithmState {
    domain: Domain,
    iteration: usize,
    history: Vec<AggregatedObservation>,
    objective: GpPosterior,
    noise: GpPosterior,
    sigma2_max: f64,
    owed: Option<Deficit>,
    pending: Option<PendingReplicates>,
}

impl AlgorithmState {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let domain = config.resolve_domain()?;
        let dim = domain.dim();
        let objective = GpPosterior::prior(config.objective_gp.initial_kernel(dim, config.horizon)?)?;
        let noise = GpPosterior::prior(config.noise_gp.initial_kernel(dim, config.horizon)?)?;
        Ok(Self {
            domain,
            iteration: 0,
            history: Vec::new(),
            objective,
            noise,
            sigma2_max: config.sigma2_max_prior,
            owed: None,
            pending: None,
        })
    }

    pub fn from_snapshot(config: &ExperimentConfig, snapshot: StateSnapshot) -> Result<Self> {
        let domain = config.resolve_domain()?;
        let (objective_data, noise_data) = datasets(&snapshot.history)?;
        Ok(Self {
            domain,
            iteration: snapshot.iteration,
            objective: crate::gp::fit(objective_data, snapshot.objective_kernel)?,
            noise: crate::gp::fit(noise_data, snapshot.noise_kernel)?,
            history: snapshot.history,
            sigma2_max: snapshot.sigma2_max,
            owed: snapshot.owed,
            pending: snapshot.pending,
        })
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            iteration: self.iteration,
            history: self.history.clone(),
            objective_kernel: self.objective.kernel().clone(),
            noise_kernel: self.noise.kernel().clone(),
            sigma2_max: self.sigma2_max,
            owed: self.owed.clone(),
            pending: self.pending.clone(),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn history(&self) -> &[AggregatedObservation] {
        &self.history
    }

    pub fn objective(&self) -> &GpPosterior {
        &self.objective
    }

    pub fn noise(&self) -> &GpPosterior {
        &self.noise
    }

    pub fn sigma2_max(&self) -> f64 {
        self.sigma2_max
    }

    /// Deficit the next proposal must settle first.
    pub fn owed(&self) -> Option<&Deficit> {
        self.owed.as_ref()
    }

    pub fn pending(&self) -> Option<&PendingReplicates> {
        self.pending.as_ref()
    }

    pub fn is_finished(&self, config: &ExperimentConfig) -> bool {
        self.iteration >= config.horizon
    }

    /// Proposes the next batch without changing the state.
    pub fn propose(
        &self,
        config: &ExperimentConfig,
        strategy: Strategy,
        known: Option<&dyn KnownVariance>,
    ) -> Result<BatchProposal> {
        if self.is_finished(config) {
            return Err(Error::input(format!("all {} iterations have been run", config.horizon)));
        }
        if self.iteration == 0 && self.history.is_empty() {
            return self.initial_design(config, strategy);
        }
        match strategy {
            Strategy::BtsRed => match config.mode {
                Mode::Known => {
                    let known: &dyn KnownVariance = match (known, &config.known_noise) {
                        (Some(k), _) => k,
                        (None, Some(k)) => k,
                        (None, None) => return Err(Error::input("known mode needs a noise variance source")),
                    };
                    select_batch_known(self, config, known)
                }
                Mode::Unknown => select_batch_unknown(self, config),
                Mode::MeanVar => select_batch_meanvar(self, config),
            },
            Strategy::FixedBatchTs { n } => baseline_fixed_batch_ts(self, config, n),
            Strategy::GpUcb { replications } => baseline_sequential(self, config, SequentialKind::GpUcb, replications),
            Strategy::GpTs { replications } => baseline_sequential(self, config, SequentialKind::GpTs, replications),
        }
    }

    fn initial_design(&self, config: &ExperimentConfig, strategy: Strategy) -> Result<BatchProposal> {
        let count = config.initial_design_size();
        if count * config.n_min > config.budget {
            return Err(Error::input("initial design does not fit in one iteration's budget"));
        }
        let picks: Vec<(Option<usize>, Vec<f64>)> = match (config.initialization, self.domain.points()) {
            (Initialization::UncertaintySampling, Some(points)) => {
                if count > points.len() {
                    return Err(Error::input("initial design larger than the domain"));
                }
                uncertainty_sampling(&self.objective, points, count)?
                    .into_iter()
                    .map(|i| (Some(i), points[i].clone()))
                    .collect()
            }
            (Initialization::UncertaintySampling, None) => {
                return Err(Error::input(
                    "uncertainty-sampling initialization needs a finite domain",
                ));
            }
            (Initialization::Random, _) => {
                let mut rng = stream_rng(config.seed, Stream::InitialDesign, &[]);
                self.domain.random_design(count, &mut rng)
            }
        };
        let slots = picks
            .into_iter()
            .map(|(index, x)| Slot {
                x,
                index,
                n: config.n_min,
                requested: config.n_min,
                kind: SlotKind::Fresh,
                variance_bound: None,
                capped: false,
            })
            .collect();
        Ok(BatchProposal {
            iteration: 1,
            strategy,
            slots,
            r_squared: None,
            n_max: config.n_min,
            effective_budget: config.budget,
            carried: None,
        })
    }

    /// Folds one replicate set per slot into the state.
    pub fn observe(
        &self,
        config: &ExperimentConfig,
        proposal: &BatchProposal,
        outcomes: &[Vec<f64>],
    ) -> Result<AlgorithmState> {
        if proposal.iteration != self.iteration + 1 {
            return Err(Error::input(format!(
                "proposal is for iteration {} but the state expects {}",
                proposal.iteration,
                self.iteration + 1
            )));
        }
        if outcomes.len() != proposal.slots.len() {
            return Err(Error::input(format!(
                "expected replicate sets for {} slots, got {}",
                proposal.slots.len(),
                outcomes.len()
            )));
        }
        for (b, (slot, values)) in proposal.slots.iter().zip(outcomes).enumerate() {
            if values.len() != slot.n {
                return Err(Error::input(format!(
                    "slot {b} needs {} replicates, got {}",
                    slot.n,
                    values.len()
                )));
            }
        }
        let t = proposal.iteration;
        let mut next = self.clone();
        next.pending = None;
        let mut fresh = Vec::new();
        for (b, (slot, values)) in proposal.slots.iter().zip(outcomes).enumerate() {
            match slot.kind {
                SlotKind::Fresh => {
                    fresh.push(AggregatedObservation::new(
                        slot.x.clone(),
                        slot.index,
                        values.clone(),
                        t,
                        b,
                    )?);
                }
                SlotKind::Partial => {
                    next.pending = Some(PendingReplicates {
                        x: slot.x.clone(),
                        index: slot.index,
                        requested: slot.requested,
                        values: values.clone(),
                        iteration: t,
                        slot: b,
                    });
                }
                SlotKind::Completion => {
                    let mut pending = self
                        .pending
                        .clone()
                        .ok_or_else(|| Error::input("completion slot without pending replicates"))?;
                    pending.values.extend_from_slice(values);
                    if pending.values.len() != pending.requested {
                        return Err(Error::input("completion does not finish the pending input"));
                    }
                    fresh.push(AggregatedObservation::new(
                        pending.x,
                        pending.index,
                        pending.values,
                        pending.iteration,
                        pending.slot,
                    )?);
                }
            }
        }
        next.owed = proposal.carried.clone();

        let obj_x: Vec<Vec<f64>> = fresh.iter().map(|o| o.x.clone()).collect();
        let obj_y: Vec<f64> = fresh.iter().map(|o| o.mean).collect();
        next.objective = next.objective.extend(obj_x, obj_y)?;
        let (noise_x, noise_y): (Vec<Vec<f64>>, Vec<f64>) = fresh
            .iter()
            .filter_map(|o| o.neg_variance.map(|v| (o.x.clone(), v)))
            .unzip();
        next.noise = next.noise.extend(noise_x, noise_y)?;
        next.history.extend(fresh);
        next.iteration = t;
        next.sigma2_max = sigma_max_estimate(&next.history, config.sigma2_max_prior)?;
        if t == 1 || t.is_multiple_of(config.refit_every) {
            next.refit(config, t)?;
        }
        Ok(next)
    }

    fn refit(&mut self, config: &ExperimentConfig, t: usize) -> Result<()> {
        if config.objective_gp.refit && !self.objective.is_empty() {
            let options = HyperOptions {
                seed: derive_seed(config.seed, Stream::Hyperparameters, &[t as u64, 0]),
                ..HyperOptions::default()
            };
            let kernel = optimize_hyperparameters(
                self.objective.data(),
                &config.objective_gp.search_space(),
                self.objective.kernel(),
                &options,
            )?;
            self.objective = self.objective.refit(kernel)?;
        }
        if config.noise_gp.refit && !self.noise.is_empty() {
            let options = HyperOptions {
                seed: derive_seed(config.seed, Stream::Hyperparameters, &[t as u64, 1]),
                ..HyperOptions::default()
            };
            let kernel = optimize_hyperparameters(
                self.noise.data(),
                &config.noise_gp.search_space(),
                self.noise.kernel(),
                &options,
            )?;
            self.noise = self.noise.refit(kernel)?;
        }
        Ok(())
    }
}

fn datasets(history: &[AggregatedObservation]) -> Result<(Dataset, Dataset)> {
    let objective = Dataset::new(
        history.iter().map(|o| o.x.clone()).collect(),
        history.iter().map(|o| o.mean).collect(),
    )?;
    let (nx, ny) = history
        .iter()
        .filter_map(|o| o.neg_variance.map(|v| (o.x.clone(), v)))
        .unzip();
    Ok((objective, Dataset::new(nx, ny)?))
}

/// Per-iteration sampling context for one GP.
struct Sampler {
    posterior: FeaturePosterior,
    /// Feature design over a finite domain, built once per iteration.
    grid: Option<DMatrix<f64>>,
}

impl Sampler {
    fn new(gp: &GpPosterior, domain: &Domain, num_features: usize, seed: u64) -> Result<Self> {
        let map = Arc::new(draw_feature_map(gp.kernel(), num_features, seed)?);
        let grid = domain.points().map(|p| map.design(p));
        Ok(Self {
            posterior: FeaturePosterior::new(gp, map)?,
            grid,
        })
    }

    fn draw(&self, scale: f64, seed: u64) -> Result<SampledFunction> {
        self.posterior.sample(scale, seed)
    }
}

/// Maximizes `ω f + (1 − ω) g` (or `f` alone) over the domain.
fn maximize(
    domain: &Domain,
    config: &ExperimentConfig,
    f: (&Sampler, &SampledFunction),
    g: Option<(&Sampler, &SampledFunction)>,
    omega: f64,
    seed: u64,
) -> Result<(Option<usize>, Vec<f64>)> {
    if let (Some(points), Some(fd)) = (domain.points(), f.0.grid.as_ref()) {
        let mut values = f.1.eval_design(fd);
        if let Some((gs, gf)) = g {
            let gd = gs.grid.as_ref().expect("finite domain has a design");
            let gv = gf.eval_design(gd);
            for (v, w) in values.iter_mut().zip(gv) {
                *v = omega * *v + (1.0 - omega) * w;
            }
        }
        let i = argmax_values(&values)?;
        return Ok((Some(i), points[i].clone()));
    }
    let best = match g {
        Some((_, gf)) => argmax(&Weighted { f: f.1, g: gf, omega }, domain, &config.argmax, seed)?,
        None => argmax(f.1, domain, &config.argmax, seed)?,
    };
    Ok((best.index, best.x))
}

/// Shared selection loop: draw, maximize, size, fund, until the ledger closes.
fn select_loop(
    state: &AlgorithmState,
    config: &ExperimentConfig,
    strategy: Strategy,
    r_squared: Option<f64>,
    n_max: usize,
    mut size: impl FnMut(&[f64], Option<usize>) -> Result<(usize, Option<f64>, bool)>,
    noise_weighted: bool,
) -> Result<BatchProposal> {
    let t = state.iteration + 1;
    let seed = config.seed;
    let mut ledger = BudgetLedger::resume(config.budget, state.owed.as_ref())?;
    let mut slots = Vec::new();
    if let Some(owed) = &state.owed {
        slots.push(Slot {
            x: owed.x.clone(),
            index: owed.index,
            n: owed.remaining,
            requested: owed.requested,
            kind: SlotKind::Completion,
            variance_bound: None,
            capped: false,
        });
    }
    let effective_budget = ledger.effective();
    let objective = Sampler::new(
        &state.objective,
        &state.domain,
        config.num_features,
        derive_seed(seed, Stream::ObjectiveFeatures, &[t as u64]),
    )?;
    let noise = if noise_weighted {
        Some(Sampler::new(
            &state.noise,
            &state.domain,
            config.num_features,
            derive_seed(seed, Stream::NoiseFeatures, &[t as u64]),
        )?)
    } else {
        None
    };
    let max_slots = config.budget;
    for b in 0..max_slots {
        if ledger.is_closed() {
            break;
        }
        let idx = [t as u64, b as u64];
        let f = objective.draw(config.beta, derive_seed(seed, Stream::ObjectiveDraw, &idx))?;
        let g = match &noise {
            Some(ns) => Some(ns.draw(config.beta_noise, derive_seed(seed, Stream::NoiseDraw, &idx))?),
            None => None,
        };
        let (index, x) = maximize(
            &state.domain,
            config,
            (&objective, &f),
            noise.as_ref().zip(g.as_ref()),
            config.omega,
            derive_seed(seed, Stream::Acquisition, &idx),
        )?;
        let (requested, bound, capped) = size(&x, index)?;
        match ledger.step(&x, index, requested) {
            Allocation::Full { n } => slots.push(Slot {
                x,
                index,
                n,
                requested,
                kind: SlotKind::Fresh,
                variance_bound: bound,
                capped,
            }),
            Allocation::Partial { now, .. } => {
                if config.carry_over {
                    slots.push(Slot {
                        x,
                        index,
                        n: now,
                        requested,
                        kind: SlotKind::Partial,
                        variance_bound: bound,
                        capped,
                    });
                } else {
                    ledger.drop_deficit();
                }
            }
            Allocation::Closed => break,
        }
    }
    Ok(BatchProposal {
        iteration: t,
        strategy,
        slots,
        r_squared,
        n_max,
        effective_budget,
        carried: ledger.deficit().cloned(),
    })
}

fn current_n_max(state: &AlgorithmState, config: &ExperimentConfig) -> Result<usize> {
    let t = state.iteration + 1;
    Ok(n_max_schedule(t, config.horizon, config.budget, config.mode, config.n_max_policy)?.max(config.n_min))
}

fn r_squared_for(config: &ExperimentConfig, sigma2_max: f64) -> Result<f64> {
    match config.r_squared {
        Some(r) => Ok(r),
        None => effective_variance(config.kappa, config.budget, sigma2_max),
    }
}

/// Adaptive replication with the noise variance supplied by `known`.
pub fn select_batch_known(
    state: &AlgorithmState,
    config: &ExperimentConfig,
    known: &dyn KnownVariance,
) -> Result<BatchProposal> {
    let r2 = r_squared_for(config, known.max_variance())?;
    let n_max = current_n_max(state, config)?;
    select_loop(
        state,
        config,
        Strategy::BtsRed,
        Some(r2),
        n_max,
        |x, index| {
            let v = known.variance(x, index)?;
            let r = replications_for(v, r2, config.n_min, n_max)?;
            Ok((r.n, Some(v), r.capped))
        },
        false,
    )
}

/// Adaptive replication sized by the noise GP's upper bound.
pub fn select_batch_unknown(state: &AlgorithmState, config: &ExperimentConfig) -> Result<BatchProposal> {
    select_with_noise_bound(state, config, false)
}

/// Adaptive replication on the mean-variance objective `ω f − (1 − ω) σ²`.
pub fn select_batch_meanvar(state: &AlgorithmState, config: &ExperimentConfig) -> Result<BatchProposal> {
    select_with_noise_bound(state, config, true)
}

fn select_with_noise_bound(state: &AlgorithmState, config: &ExperimentConfig, weighted: bool) -> Result<BatchProposal> {
    let r2 = r_squared_for(config, state.sigma2_max)?;
    let n_max = current_n_max(state, config)?;
    let floor = variance_floor(state.sigma2_max);
    select_loop(
        state,
        config,
        Strategy::BtsRed,
        Some(r2),
        n_max,
        |x, _| {
            let u = variance_upper_bound(&state.noise, x, config.beta_noise, floor)?;
            let r = replications_for(u, r2, config.n_min, n_max)?;
            Ok((r.n, Some(u), r.capped))
        },
        weighted,
    )
}

/// Batch Thompson sampling with a fixed replication count per input.
pub fn baseline_fixed_batch_ts(
    state: &AlgorithmState,
    config: &ExperimentConfig,
    n_fixed: usize,
) -> Result<BatchProposal> {
    if n_fixed == 0 || n_fixed > config.budget {
        return Err(Error::input(format!("n_fixed must lie in 1..={}", config.budget)));
    }
    if state.owed.is_some() {
        return Err(Error::input("fixed-replication batches never carry budget over"));
    }
    let mut proposal = select_loop(
        state,
        config,
        Strategy::FixedBatchTs { n: n_fixed },
        None,
        n_fixed,
        |_, _| Ok((n_fixed, None, false)),
        false,
    )?;
    // fixed batches hold ⌊𝔹/n⌋ inputs; the leftover budget is unused
    proposal.slots.retain(|s| s.kind == SlotKind::Fresh);
    proposal.carried = None;
    Ok(proposal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequentialKind {
    GpUcb,
    GpTs,
}

struct Ucb<'a> {
    gp: &'a GpPosterior,
    beta: f64,
}

impl Objective for Ucb<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (m, v) = self.gp.posterior_unchecked(x);
        m + self.beta * v.max(0.0).sqrt()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|k| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[k] = (hi[k] + h).min(1.0);
                lo[k] = (lo[k] - h).max(0.0);
                (self.value(&hi) - self.value(&lo)) / (hi[k] - lo[k])
            })
            .collect()
    }
}

/// One input per iteration, chosen by GP-UCB or GP-TS.
pub fn baseline_sequential(
    state: &AlgorithmState,
    config: &ExperimentConfig,
    kind: SequentialKind,
    replications_per_query: usize,
) -> Result<BatchProposal> {
    if replications_per_query == 0 || replications_per_query > config.budget {
        return Err(Error::input(format!("replications must lie in 1..={}", config.budget)));
    }
    let t = state.iteration + 1;
    let idx = [t as u64, 0];
    let (index, x) = match kind {
        SequentialKind::GpUcb => {
            let ucb = Ucb {
                gp: &state.objective,
                beta: config.beta,
            };
            match state.domain.points() {
                Some(points) => {
                    let scores: Vec<f64> = points.iter().map(|p| ucb.value(p)).collect();
                    let i = argmax_values(&scores)?;
                    (Some(i), points[i].clone())
                }
                None => {
                    let best = argmax(
                        &ucb,
                        &state.domain,
                        &config.argmax,
                        derive_seed(config.seed, Stream::Acquisition, &idx),
                    )?;
                    (best.index, best.x)
                }
            }
        }
        SequentialKind::GpTs => {
            let sampler = Sampler::new(
                &state.objective,
                &state.domain,
                config.num_features,
                derive_seed(config.seed, Stream::ObjectiveFeatures, &[t as u64]),
            )?;
            let f = sampler.draw(config.beta, derive_seed(config.seed, Stream::ObjectiveDraw, &idx))?;
            maximize(
                &state.domain,
                config,
                (&sampler, &f),
                None,
                1.0,
                derive_seed(config.seed, Stream::Acquisition, &idx),
            )?
        }
    };
    let strategy = match kind {
        SequentialKind::GpUcb => Strategy::GpUcb {
            replications: replications_per_query,
        },
        SequentialKind::GpTs => Strategy::GpTs {
            replications: replications_per_query,
        },
    };
    Ok(BatchProposal {
        iteration: t,
        strategy,
        slots: vec![Slot {
            x,
            index,
            n: replications_per_query,
            requested: replications_per_query,
            kind: SlotKind::Fresh,
            variance_bound: None,
            capped: false,
        }],
        r_squared: None,
        n_max: replications_per_query,
        effective_budget: config.budget,
        carried: None,
    })
}

/// How the recommended input is chosen from the observation history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportingRule {
    EmpiricalMean,
    /// Largest `μ − β σ` among observed inputs.
    Lcb {
        beta: f64,
    },
    /// Largest `ω y + (1 − ω) ỹ` among inputs with at least two replicates.
    EmpiricalMeanVariance {
        omega: f64,
    },
}

impl ReportingRule {
    pub fn name(&self) -> &'static str {
        match self {
            ReportingRule::EmpiricalMean => "empirical_mean",
            ReportingRule::Lcb { .. } => "lcb",
            ReportingRule::EmpiricalMeanVariance { .. } => "empirical_mean_variance",
        }
    }
}

/// Position in `history` of the incumbent under `rule`; ties go to the
/// earliest record.
pub fn report_incumbent(
    history: &[AggregatedObservation],
    rule: ReportingRule,
    model: Option<&GpPosterior>,
) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::input("no observations to report from"));
    }
    let scores: Vec<f64> = match rule {
        ReportingRule::EmpiricalMean => history.iter().map(|o| o.mean).collect(),
        ReportingRule::Lcb { beta } => {
            let gp = model.ok_or_else(|| Error::input("the lcb rule needs the objective posterior"))?;
            history
                .iter()
                .map(|o| {
                    let (m, v) = gp.posterior_at(&o.x)?;
                    Ok(m - beta * v.max(0.0).sqrt())
                })
                .collect::<Result<_>>()?
        }
        ReportingRule::EmpiricalMeanVariance { omega } => {
            if !history.iter().any(|o| o.neg_variance.is_some()) {
                return Err(Error::input(
                    "the mean-variance rule needs a record with two or more replicates",
                ));
            }
            history
                .iter()
                .map(|o| match o.neg_variance {
                    Some(nv) => omega * o.mean + (1.0 - omega) * nv,
                    None => f64::NEG_INFINITY,
                })
                .collect()
        }
    };
    argmax_values(&scores)
}
