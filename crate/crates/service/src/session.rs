//! Session state machine. Every mutation is an [`Event`]; applying the
//! event log to a freshly created session reproduces the live state.

use btsred::algorithms::StateSnapshot;
use btsred::{AlgorithmState, BatchProposal, ExperimentConfig, Mode, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        id: String,
        config: ExperimentConfig,
    },
    Suggested {
        proposal: BatchProposal,
    },
    Observed {
        outcomes: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metadata: Option<serde_json::Value>,
    },
    WeightUpdated {
        omega: f64,
    },
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AuditAction {
    Suggested {
        iteration: usize,
        slots: usize,
        replications: usize,
    },
    Observed {
        iteration: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metadata: Option<serde_json::Value>,
    },
    WeightUpdated {
        from: f64,
        to: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: AuditAction,
}

/// The persisted form of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub schema_version: u32,
    pub id: String,
    pub created_at_ms: u64,
    pub config: ExperimentConfig,
    pub state: StateSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outstanding: Option<BatchProposal>,
    pub audit: Vec<AuditEntry>,
    /// Sequence number of the last applied event.
    pub last_seq: u64,
}

impl SessionState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let state: SessionState =
            serde_json::from_slice(bytes).map_err(|e| ServiceError::Storage(format!("corrupt session state: {e}")))?;
        if state.schema_version != SCHEMA_VERSION {
            return Err(ServiceError::Storage(format!(
                "unsupported schema version {}",
                state.schema_version
            )));
        }
        Ok(state)
    }

    fn has_key(&self, key: &str) -> bool {
        self.audit.iter().any(|a| match &a.action {
            AuditAction::Observed { idempotency_key, .. } => idempotency_key.as_deref() == Some(key),
            _ => false,
        })
    }
}

/// Replicate outcomes for the outstanding proposal, one list per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveRequest {
    pub outcomes: Vec<Vec<f64>>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    /// Free-form client data (plot labels and the like), echoed in the audit log.
    #[serde(default)]
    pub metadata: Option<serde_json::Value>,
}

/// A session's persisted state together with its live model.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    algo: AlgorithmState,
}

fn check_config(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    if config.mode == Mode::Known && config.known_noise.is_none() {
        return Err(ServiceError::validation(
            "known mode sessions need known_noise",
            vec!["known_noise".into()],
        ));
    }
    Ok(())
}

impl Session {
    /// Checks `config` and returns the creation event for a new session.
    pub fn creation_event(id: String, config: ExperimentConfig, at_ms: u64) -> Result<Event> {
        check_config(&config)?;
        Ok(Event {
            seq: 1,
            at_ms,
            event: EventKind::Created { id, config },
        })
    }

    /// Builds a session from its creation event.
    pub fn from_creation(event: &Event) -> Result<Self> {
        let EventKind::Created { id, config } = &event.event else {
            return Err(ServiceError::Storage(
                "event log must start with a creation event".into(),
            ));
        };
        check_config(config)?;
        let algo = AlgorithmState::new(config)?;
        Ok(Self {
            state: SessionState {
                schema_version: SCHEMA_VERSION,
                id: id.clone(),
                created_at_ms: event.at_ms,
                config: config.clone(),
                state: algo.snapshot(),
                outstanding: None,
                audit: Vec::new(),
                last_seq: event.seq,
            },
            algo,
        })
    }

    /// Rebuilds the live model from a persisted state.
    pub fn from_state(state: SessionState) -> Result<Self> {
        let algo = AlgorithmState::from_snapshot(&state.config, state.state.clone())?;
        Ok(Self { state, algo })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn algorithm(&self) -> &AlgorithmState {
        &self.algo
    }

    pub fn id(&self) -> &str {
        &self.state.id
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    pub fn outstanding(&self) -> Option<&BatchProposal> {
        self.state.outstanding.as_ref()
    }

    fn next_seq(&self) -> u64 {
        self.state.last_seq + 1
    }

    /// Computes the next proposal as an event; the session is unchanged.
    pub fn suggest(&self, at_ms: u64) -> Result<Event> {
        if self.state.outstanding.is_some() {
            return Err(ServiceError::Conflict(
                "a proposal is already outstanding; observe it first".into(),
            ));
        }
        if self.algo.is_finished(&self.state.config) {
            return Err(ServiceError::Conflict(format!(
                "session finished all {} iterations",
                self.state.config.horizon
            )));
        }
        let proposal = self.algo.propose(&self.state.config, Strategy::BtsRed, None)?;
        Ok(Event {
            seq: self.next_seq(),
            at_ms,
            event: EventKind::Suggested { proposal },
        })
    }

    /// The observation event for `request`, or `None` when its idempotency
    /// key has already been applied.
    pub fn observe(&self, request: ObserveRequest, at_ms: u64) -> Result<Option<Event>> {
        if let Some(key) = &request.idempotency_key {
            if self.state.has_key(key) {
                return Ok(None);
            }
        }
        let proposal = self
            .state
            .outstanding
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict("no outstanding proposal to observe".into()))?;
        check_outcomes(proposal, &request.outcomes)?;
        Ok(Some(Event {
            seq: self.next_seq(),
            at_ms,
            event: EventKind::Observed {
                outcomes: request.outcomes,
                idempotency_key: request.idempotency_key,
                metadata: request.metadata,
            },
        }))
    }

    pub fn update_weight(&self, omega: f64, at_ms: u64) -> Result<Event> {
        if self.state.config.mode != Mode::MeanVar {
            return Err(ServiceError::Unsupported(
                "the weight can only be changed in mean_var sessions".into(),
            ));
        }
        if !(0.0..=1.0).contains(&omega) {
            return Err(ServiceError::validation(
                "omega must lie in [0, 1]",
                vec!["omega".into()],
            ));
        }
        if self.state.outstanding.is_some() {
            return Err(ServiceError::Conflict(
                "the weight cannot change while a proposal is outstanding".into(),
            ));
        }
        Ok(Event {
            seq: self.next_seq(),
            at_ms,
            event: EventKind::WeightUpdated { omega },
        })
    }

    /// The session after `event`. Used for live mutations and log replay alike.
    pub fn apply(&self, event: &Event) -> Result<Session> {
        if event.seq != self.next_seq() {
            return Err(ServiceError::Storage(format!(
                "event {} out of order; expected {}",
                event.seq,
                self.next_seq()
            )));
        }
        let mut next = self.clone();
        next.state.last_seq = event.seq;
        let action = match &event.event {
            EventKind::Created { .. } => {
                return Err(ServiceError::Storage("duplicate creation event".into()));
            }
            EventKind::Suggested { proposal } => {
                if self.state.outstanding.is_some() {
                    return Err(ServiceError::Conflict("a proposal is already outstanding".into()));
                }
                next.state.outstanding = Some(proposal.clone());
                AuditAction::Suggested {
                    iteration: proposal.iteration,
                    slots: proposal.slots.len(),
                    replications: proposal.budget_used(),
                }
            }
            EventKind::Observed {
                outcomes,
                idempotency_key,
                metadata,
            } => {
                let proposal = self
                    .state
                    .outstanding
                    .as_ref()
                    .ok_or_else(|| ServiceError::Conflict("no outstanding proposal to observe".into()))?;
                check_outcomes(proposal, outcomes)?;
                next.algo = self.algo.observe(&self.state.config, proposal, outcomes)?;
                next.state.state = next.algo.snapshot();
                next.state.outstanding = None;
                AuditAction::Observed {
                    iteration: proposal.iteration,
                    idempotency_key: idempotency_key.clone(),
                    metadata: metadata.clone(),
                }
            }
            EventKind::WeightUpdated { omega } => {
                let from = self.state.config.omega;
                next.state.config.omega = *omega;
                AuditAction::WeightUpdated { from, to: *omega }
            }
        };
        next.state.audit.push(AuditEntry {
            seq: event.seq,
            at_ms: event.at_ms,
            action,
        });
        Ok(next)
    }
}

fn check_outcomes(proposal: &BatchProposal, outcomes: &[Vec<f64>]) -> Result<()> {
    if outcomes.len() != proposal.slots.len() {
        return Err(ServiceError::validation(
            format!(
                "expected replicate lists for {} slots, got {}",
                proposal.slots.len(),
                outcomes.len()
            ),
            vec!["outcomes".into()],
        ));
    }
    let mut paths = Vec::new();
    let mut problems = Vec::new();
    for (b, (slot, values)) in proposal.slots.iter().zip(outcomes).enumerate() {
        if values.len() != slot.n {
            paths.push(format!("outcomes[{b}]"));
            problems.push(format!("slot {b} needs {} replicates, got {}", slot.n, values.len()));
        } else if values.iter().any(|v| !v.is_finite()) {
            paths.push(format!("outcomes[{b}]"));
            problems.push(format!("slot {b} has a non-finite value"));
        }
    }
    if paths.is_empty() {
        Ok(())
    } else {
        Err(ServiceError::validation(problems.join("; "), paths))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use btsred::DomainSpec;

    fn config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Mode::MeanVar, DomainSpec::unit_grid(21), 12, 4, 5);
        c.num_features = 64;
        c.omega = 0.5;
        c
    }

    fn fresh() -> Session {
        let ev = Session::creation_event("s".into(), config(), 10).unwrap();
        Session::from_creation(&ev).unwrap()
    }

    fn outcomes(p: &BatchProposal) -> Vec<Vec<f64>> {
        p.slots
            .iter()
            .map(|s| (0..s.n).map(|k| s.x[0] + 0.1 * k as f64).collect())
            .collect()
    }

    #[test]
    fn suggest_observe_alternate() {
        let s = fresh();
        let ev = s.suggest(11).unwrap();
        let s = s.apply(&ev).unwrap();
        assert!(matches!(s.suggest(12), Err(ServiceError::Conflict(_))));
        let p = s.outstanding().unwrap().clone();
        assert!(p.slots.iter().all(|slot| slot.n == 2));
        assert_eq!(p.slots.len(), 6);
        let ev = s
            .observe(
                ObserveRequest {
                    outcomes: outcomes(&p),
                    idempotency_key: Some("k1".into()),
                    metadata: None,
                },
                13,
            )
            .unwrap()
            .unwrap();
        let s = s.apply(&ev).unwrap();
        assert_eq!(s.algorithm().history().len(), 6);
        assert!(s.outstanding().is_none());
        let again = ObserveRequest {
            outcomes: outcomes(&p),
            idempotency_key: Some("k1".into()),
            metadata: None,
        };
        assert!(s.observe(again, 14).unwrap().is_none());
        assert_eq!(s.state().audit.len(), 2);
    }

    #[test]
    fn short_replicate_list_names_the_slot() {
        let s = fresh();
        let s = s.apply(&s.suggest(1).unwrap()).unwrap();
        let mut out = outcomes(s.outstanding().unwrap());
        out[3].pop();
        let err = s
            .observe(
                ObserveRequest {
                    outcomes: out,
                    idempotency_key: None,
                    metadata: None,
                },
                2,
            )
            .unwrap_err();
        match err {
            ServiceError::Validation { field_paths, .. } => assert_eq!(field_paths, vec!["outcomes[3]"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weight_rules() {
        let s = fresh();
        assert!(matches!(s.update_weight(-0.1, 1), Err(ServiceError::Validation { .. })));
        let s2 = s.apply(&s.update_weight(0.25, 1).unwrap()).unwrap();
        assert_eq!(s2.config().omega, 0.25);
        let s3 = s2.apply(&s2.suggest(2).unwrap()).unwrap();
        assert!(matches!(s3.update_weight(0.5, 3), Err(ServiceError::Conflict(_))));

        let mut known = config();
        known.mode = Mode::Known;
        known.omega = 1.0;
        known.n_min = 1;
        known.known_noise = Some(btsred::config::KnownNoise::Constant { variance: 0.1 });
        let k = Session::from_creation(&Session::creation_event("k".into(), known, 0).unwrap()).unwrap();
        assert!(matches!(k.update_weight(0.5, 1), Err(ServiceError::Unsupported(_))));
    }

    #[test]
    fn invalid_configs_report_paths() {
        let mut c = config();
        c.omega = 1.2;
        match Session::creation_event("x".into(), c, 0).unwrap_err() {
            ServiceError::Validation { field_paths, .. } => assert!(field_paths.contains(&"omega".to_string())),
            other => panic!("{other:?}"),
        }
        let mut c = config();
        c.mode = Mode::Known;
        c.omega = 1.0;
        assert!(Session::creation_event("x".into(), c, 0).is_err());
    }

    #[test]
    fn state_round_trip_is_byte_identical() {
        let s = fresh();
        let s = s.apply(&s.suggest(1).unwrap()).unwrap();
        let p = s.outstanding().unwrap().clone();
        let ev = s
            .observe(
                ObserveRequest {
                    outcomes: outcomes(&p),
                    idempotency_key: None,
                    metadata: Some(serde_json::json!({"plots": ["a", "b"]})),
                },
                2,
            )
            .unwrap()
            .unwrap();
        let s = s.apply(&ev).unwrap();
        let bytes = s.state().to_bytes().unwrap();
        let back = Session::from_state(SessionState::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.state().to_bytes().unwrap(), bytes);
        assert_eq!(back.suggest(3).unwrap(), s.suggest(3).unwrap());
    }
}
