//! Synthetic benchmarks: problems, simulated replicates, regret and
//! seeded multi-strategy runs.

pub mod problem;
pub mod regret;
pub mod run;

pub use crate::algorithms::{report_incumbent, ReportingRule};
pub use problem::{make_synthetic_problem, simulate_observation, ProblemSpec, SyntheticProblem};
pub use regret::{batch_simple_and_cumulative_regret, mean_variance_regret, RegretStep};
pub use run::{
    determinism_hash, run_experiment, run_strategy, summarize, trace_csv, write_results, BenchConfig,
    ExperimentResults, ExperimentSummary, IterationRecord, ProblemSource, RunSummary, RunTrace, SlotRecord,
};
