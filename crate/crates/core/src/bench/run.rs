//! Seeded head-to-head runs on synthetic problems.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{report_incumbent, AlgorithmState, KnownVariance, ReportingRule, SlotKind, Strategy};
use crate::bench::problem::{make_synthetic_problem, simulate_observation, ProblemSpec, SyntheticProblem};
use crate::bench::regret::{batch_simple_and_cumulative_regret, mean_variance_regret};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::schedule::Mode;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    /// Generated from `spec`; with `reseed` each run seed also seeds the problem.
    Synthetic {
        spec: ProblemSpec,
        #[serde(default = "yes")]
        reseed: bool,
    },
    Table {
        problem: SyntheticProblem,
    },
}

impl ProblemSource {
    pub fn problem_for(&self, seed: u64) -> Result<SyntheticProblem> {
        match self {
            ProblemSource::Synthetic { spec, reseed } => {
                let spec = ProblemSpec {
                    seed: if *reseed { seed } else { spec.seed },
                    ..spec.clone()
                };
                make_synthetic_problem(&spec)
            }
            ProblemSource::Table { problem } => Ok(problem.clone()),
        }
    }
}

/// A benchmark file: one experiment configuration shared by all strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub experiment: ExperimentConfig,
    pub problem: ProblemSource,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Incumbent rule; defaults to the empirical mean-variance rule in
    /// mean_var mode and the empirical mean otherwise.
    #[serde(default)]
    pub rule: Option<ReportingRule>,
}

impl BenchConfig {
    pub fn reporting_rule(&self) -> ReportingRule {
        self.rule.unwrap_or(match self.experiment.mode {
            Mode::MeanVar => ReportingRule::EmpiricalMeanVariance {
                omega: self.experiment.omega,
            },
            _ => ReportingRule::EmpiricalMean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub index: usize,
    pub n: usize,
    pub requested: usize,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub budget_used: usize,
    pub slots: Vec<SlotRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    /// Best gap within this iteration's batch.
    pub batch_regret: f64,
    pub cumulative_regret: f64,
    /// Running minimum of `batch_regret`.
    pub batch_simple_regret: f64,
    pub mv_batch_regret: f64,
    pub mv_regret: f64,
    /// Grid index of the reported incumbent.
    pub incumbent: usize,
    pub incumbent_x: Vec<f64>,
    /// Gap of the incumbent on the objective the rule targets.
    pub simple_regret: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub strategy: Strategy,
    pub label: String,
    pub seed: u64,
    pub rule: ReportingRule,
    pub optimum: usize,
    pub mean_variance_optimum: usize,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("runs have at least one iteration")
    }
}

fn incumbent_gap(problem: &SyntheticProblem, rule: ReportingRule, i: usize) -> f64 {
    match rule {
        ReportingRule::EmpiricalMeanVariance { omega } => {
            problem.h(omega, problem.mean_variance_optimum(omega)) - problem.h(omega, i)
        }
        _ => problem.f[problem.optimum()] - problem.f[i],
    }
}

/// Runs one strategy end to end; `config.seed` drives every random stream.
pub fn run_strategy(
    problem: &SyntheticProblem,
    config: &ExperimentConfig,
    strategy: Strategy,
    rule: ReportingRule,
) -> Result<RunTrace> {
    if config.domain != problem.domain {
        return Err(Error::input("experiment domain differs from the problem's domain"));
    }
    let known: Option<&dyn KnownVariance> = if config.mode == Mode::Known && config.known_noise.is_none() {
        Some(problem)
    } else {
        None
    };
    let mut state = AlgorithmState::new(config)?;
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut records = Vec::new();
    for t in 1..=config.horizon {
        let started = Instant::now();
        let proposal = state.propose(config, strategy, known)?;
        let mut outcomes = Vec::with_capacity(proposal.slots.len());
        let mut slots = Vec::with_capacity(proposal.slots.len());
        for (b, slot) in proposal.slots.iter().enumerate() {
            let index = slot
                .index
                .ok_or_else(|| Error::input("benchmarks need a finite domain"))?;
            let seed = derive_seed(config.seed, Stream::Observation, &[t as u64, b as u64]);
            outcomes.push(simulate_observation(problem, index, slot.n, seed)?);
            slots.push(SlotRecord {
                index,
                n: slot.n,
                requested: slot.requested,
                kind: slot.kind,
            });
        }
        state = state.observe(config, &proposal, &outcomes)?;
        let batch: Vec<usize> = proposal.selected().filter_map(|s| s.index).collect();
        if batch.is_empty() {
            return Err(Error::input(format!("iteration {t} selected no inputs")));
        }
        batches.push(batch);
        let plain = batch_simple_and_cumulative_regret(problem, &batches)?;
        let mv = mean_variance_regret(problem, config.omega, &batches)?;
        let history = state.history();
        let incumbent = history[report_incumbent(history, rule, Some(state.objective()))?]
            .index
            .ok_or_else(|| Error::input("benchmarks need a finite domain"))?;
        let step = plain[t - 1];
        let mv_step = mv[t - 1];
        records.push(IterationRecord {
            iteration: t,
            budget_used: proposal.budget_used(),
            slots,
            r_squared: proposal.r_squared,
            batch_regret: step.increment,
            cumulative_regret: step.cumulative,
            batch_simple_regret: step.simple,
            mv_batch_regret: mv_step.increment,
            mv_regret: mv_step.cumulative,
            incumbent,
            incumbent_x: state.domain().to_real(&problem.points[incumbent]),
            simple_regret: incumbent_gap(problem, rule, incumbent),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(RunTrace {
        strategy,
        label: strategy.label(config.mode),
        seed: config.seed,
        rule,
        optimum: problem.optimum(),
        mean_variance_optimum: problem.mean_variance_optimum(config.omega),
        records,
    })
}

/// Traces for every (seed, strategy) pair, seeds outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: BenchConfig,
    pub runs: Vec<RunTrace>,
}

pub fn run_experiment(config: &BenchConfig) -> Result<ExperimentResults> {
    if config.strategies.is_empty() {
        return Err(Error::input("at least one strategy is required"));
    }
    if config.seeds.is_empty() {
        return Err(Error::input("at least one seed is required"));
    }
    config.experiment.validate()?;
    let rule = config.reporting_rule();
    let problems: Vec<SyntheticProblem> = config
        .seeds
        .iter()
        .map(|&s| config.problem.problem_for(s))
        .collect::<Result<_>>()?;
    if let Some(p) = problems.iter().find(|p| p.domain != config.experiment.domain) {
        return Err(Error::input(format!(
            "experiment domain conflicts with the problem domain {:?}",
            p.domain
        )));
    }
    let jobs: Vec<(usize, Strategy)> = (0..config.seeds.len())
        .flat_map(|i| config.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            let experiment = ExperimentConfig {
                seed: config.seeds[i],
                ..config.experiment.clone()
            };
            run_strategy(&problems[i], &experiment, strategy, rule)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResults {
        config: config.clone(),
        runs,
    })
}

fn fmt_x(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

/// Per-run CSV: one row per iteration plus a `summary` row.
pub fn trace_csv(trace: &RunTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "budget_used",
        "simple_regret",
        "cumulative_regret",
        "mv_regret",
        "incumbent_x",
        "rule",
    ])?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            r.budget_used.to_string(),
            format!("{}", r.simple_regret),
            format!("{}", r.cumulative_regret),
            format!("{}", r.mv_regret),
            fmt_x(&r.incumbent_x),
            trace.rule.name().to_string(),
        ])?;
    }
    let last = trace.last();
    let total: usize = trace.records.iter().map(|r| r.budget_used).sum();
    w.write_record([
        "summary".to_string(),
        total.to_string(),
        format!("{}", last.simple_regret),
        format!("{}", last.cumulative_regret),
        format!("{}", last.mv_regret),
        fmt_x(&last.incumbent_x),
        trace.rule.name().to_string(),
    ])?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub csv: String,
    pub final_simple_regret: f64,
    pub final_cumulative_regret: f64,
    pub final_mv_regret: f64,
    pub budget_used: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: BenchConfig,
    pub seeds: Vec<u64>,
    pub strategies: Vec<String>,
    pub runs: Vec<RunSummary>,
    /// SHA-256 over every run's label, seed and CSV bytes, in run order.
    pub determinism_hash: String,
}

/// Hash of the CSV output; wall-clock fields are not part of it.
pub fn determinism_hash(results: &ExperimentResults) -> Result<String> {
    let mut hasher = Sha256::new();
    for run in &results.runs {
        hasher.update(run.label.as_bytes());
        hasher.update(run.seed.to_le_bytes());
        hasher.update(trace_csv(run)?);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn summarize(results: &ExperimentResults) -> Result<ExperimentSummary> {
    let runs = results
        .runs
        .iter()
        .map(|r| {
            let last = r.last();
            RunSummary {
                label: r.label.clone(),
                seed: r.seed,
                csv: format!("{}_seed{}.csv", r.label, r.seed),
                final_simple_regret: last.simple_regret,
                final_cumulative_regret: last.cumulative_regret,
                final_mv_regret: last.mv_regret,
                budget_used: r.records.iter().map(|x| x.budget_used).sum(),
                wall_ms: r.records.iter().map(|x| x.wall_ms).sum(),
            }
        })
        .collect();
    Ok(ExperimentSummary {
        config: results.config.clone(),
        seeds: results.config.seeds.clone(),
        strategies: results
            .config
            .strategies
            .iter()
            .map(|s| s.label(results.config.experiment.mode))
            .collect(),
        runs,
        determinism_hash: determinism_hash(results)?,
    })
}

/// Writes one CSV per run plus `summary.json` and `traces.json`.
pub fn write_results(results: &ExperimentResults, out: &Path) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out)?;
    let summary = summarize(results)?;
    for (run, s) in results.runs.iter().zip(&summary.runs) {
        std::fs::write(out.join(&s.csv), trace_csv(run)?)?;
    }
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    std::fs::write(out.join("traces.json"), serde_json::to_vec(&results.runs)?)?;
    Ok(summary)
}
