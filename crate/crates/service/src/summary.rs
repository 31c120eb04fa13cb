//! Read-side documents: session summaries, proposals in real units and
//! posterior grids.

use btsred::algorithms::{report_incumbent, PendingReplicates, SlotKind};
use btsred::schedule::Deficit;
use btsred::{BatchProposal, ExperimentConfig, Mode, ReportingRule};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::{AuditEntry, Session};

pub const DEFAULT_GRID_RESOLUTION: usize = 16;
pub const MAX_GRID_RESOLUTION: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    /// Condition in real units.
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub n: usize,
    pub requested: usize,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    pub iteration: usize,
    pub slots: Vec<SlotView>,
    pub budget_used: usize,
    pub effective_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    pub n_max: usize,
}

pub fn proposal_view(session: &Session, proposal: &BatchProposal) -> ProposalView {
    let domain = session.algorithm().domain();
    ProposalView {
        iteration: proposal.iteration,
        slots: proposal
            .slots
            .iter()
            .map(|s| SlotView {
                x: domain.to_real(&s.x),
                index: s.index,
                n: s.n,
                requested: s.requested,
                kind: s.kind,
                variance_bound: s.variance_bound,
            })
            .collect(),
        budget_used: proposal.budget_used(),
        effective_budget: proposal.effective_budget,
        r_squared: proposal.r_squared,
        n_max: proposal.n_max,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub rule: String,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    pub replications: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub replications: usize,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerView {
    pub budget: usize,
    /// Budget fresh selections get in the next proposal.
    pub next_effective_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owed: Option<Deficit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingReplicates>,
}

/// Posterior summaries on a regular grid over the domain's bounding box,
/// flattened row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridExport {
    pub resolution: usize,
    /// Axis coordinates in real units.
    pub axes: Vec<Vec<f64>>,
    pub objective_mean: Vec<f64>,
    pub objective_variance: Vec<f64>,
    /// Noise-variance estimate `−μ'(x)`; known variances in known mode.
    pub noise_variance: Vec<f64>,
    /// Posterior standard deviation of the noise model.
    pub noise_uncertainty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub schema_version: u32,
    pub mode: Mode,
    pub omega: f64,
    pub config: ExperimentConfig,
    pub iteration: usize,
    pub horizon: usize,
    pub finished: bool,
    pub sigma2_max: f64,
    pub ledger: LedgerView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outstanding: Option<ProposalView>,
    pub incumbents: Vec<Incumbent>,
    pub history: Vec<HistoryEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridExport>,
    pub audit: Vec<AuditEntry>,
}

fn incumbents(session: &Session) -> Result<Vec<Incumbent>> {
    let algo = session.algorithm();
    let history = algo.history();
    if history.is_empty() {
        return Ok(Vec::new());
    }
    let config = session.config();
    let mut rules = vec![ReportingRule::EmpiricalMean, ReportingRule::Lcb { beta: config.beta }];
    if history.iter().any(|o| o.neg_variance.is_some()) {
        rules.push(ReportingRule::EmpiricalMeanVariance { omega: config.omega });
    }
    rules
        .into_iter()
        .map(|rule| {
            let o = &history[report_incumbent(history, rule, Some(algo.objective()))?];
            Ok(Incumbent {
                rule: rule.name().to_string(),
                x: algo.domain().to_real(&o.x),
                index: o.index,
                mean: o.mean,
                variance: o.variance(),
                replications: o.replications(),
                iteration: o.iteration,
            })
        })
        .collect()
}

pub fn grid_export(session: &Session, resolution: usize) -> Result<GridExport> {
    if !(2..=MAX_GRID_RESOLUTION).contains(&resolution) {
        return Err(ServiceError::validation(
            format!("resolution must lie in 2..={MAX_GRID_RESOLUTION}"),
            vec!["resolution".into()],
        ));
    }
    let algo = session.algorithm();
    let domain = algo.domain();
    let dim = domain.dim();
    if dim > 2 {
        return Err(ServiceError::Unsupported(format!(
            "grid export covers 1-D and 2-D domains, this one has {dim} dimensions"
        )));
    }
    let unit: Vec<f64> = (0..resolution).map(|i| i as f64 / (resolution - 1) as f64).collect();
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            unit.iter()
                .map(|u| domain.lower()[d] + u * (domain.upper()[d] - domain.lower()[d]))
                .collect()
        })
        .collect();
    let points: Vec<Vec<f64>> = match dim {
        1 => unit.iter().map(|&u| vec![u]).collect(),
        _ => unit
            .iter()
            .flat_map(|&a| unit.iter().map(move |&b| vec![a, b]))
            .collect(),
    };
    let objective = algo.objective().posterior_many(&points)?;
    let noise = algo.noise().posterior_many(&points)?;
    let config = session.config();
    let noise_variance = match (&config.known_noise, config.mode) {
        (Some(btsred::config::KnownNoise::Constant { variance }), Mode::Known) => vec![*variance; points.len()],
        _ => noise.iter().map(|(m, _)| (-m).max(0.0)).collect(),
    };
    Ok(GridExport {
        resolution,
        axes,
        objective_mean: objective.iter().map(|p| p.0).collect(),
        objective_variance: objective.iter().map(|p| p.1.max(0.0)).collect(),
        noise_variance,
        noise_uncertainty: noise.iter().map(|p| p.1.max(0.0).sqrt()).collect(),
    })
}

pub fn summarize(session: &Session, resolution: Option<usize>) -> Result<SessionSummary> {
    let algo = session.algorithm();
    let state = session.state();
    let config = session.config();
    let grid = match resolution {
        Some(r) => Some(grid_export(session, r)?),
        None if algo.domain().dim() <= 2 => Some(grid_export(session, DEFAULT_GRID_RESOLUTION)?),
        None => None,
    };
    Ok(SessionSummary {
        id: state.id.clone(),
        schema_version: state.schema_version,
        mode: config.mode,
        omega: config.omega,
        config: config.clone(),
        iteration: algo.iteration(),
        horizon: config.horizon,
        finished: algo.is_finished(config),
        sigma2_max: algo.sigma2_max(),
        ledger: LedgerView {
            budget: config.budget,
            next_effective_budget: config.budget - algo.owed().map_or(0, |d| d.remaining),
            owed: algo.owed().cloned(),
            pending: algo.pending().cloned(),
        },
        outstanding: session.outstanding().map(|p| proposal_view(session, p)),
        incumbents: incumbents(session)?,
        history: algo
            .history()
            .iter()
            .map(|o| HistoryEntry {
                iteration: o.iteration,
                x: algo.domain().to_real(&o.x),
                replications: o.replications(),
                mean: o.mean,
                variance: o.variance(),
            })
            .collect(),
        grid,
        audit: state.audit.clone(),
    })
}
