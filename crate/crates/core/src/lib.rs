//! Batch Bayesian optimization with adaptive replication for problems whose
//! observation noise varies across the input space.
//!
//! The crate is organised around two Gaussian processes: one for the
//! objective and one for the (negated) noise variance. Each iteration a
//! batch of inputs is drawn by Thompson sampling and every input is given
//! enough replications to push its effective noise below a common target.

pub mod algorithms;
pub mod bench;
pub mod config;
pub mod domain;
pub mod error;
pub mod gp;
pub mod noise;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use algorithms::{AlgorithmState, BatchProposal, ReportingRule, Slot, SlotKind, StateSnapshot, Strategy};
pub use config::ExperimentConfig;
pub use domain::{Domain, DomainSpec};
pub use error::{Error, FieldError, Result};
pub use schedule::{Mode, NMaxPolicy};
