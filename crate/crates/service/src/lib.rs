//! Ask-tell experiment sessions over HTTP.
//!
//! A session wraps one [`btsred::ExperimentConfig`] and walks it through
//! alternating suggest/observe steps. Sessions are persisted as an
//! append-only event log plus periodic snapshots, so a restarted service
//! picks up exactly where it stopped.

pub mod error;
pub mod http;
pub mod session;
pub mod store;
pub mod summary;

pub use error::{ErrorBody, Result, ServiceError};
pub use http::{router, serve};
pub use session::{Event, EventKind, ObserveRequest, Session, SessionState};
pub use store::{load_session, Store};
pub use summary::{GridExport, ProposalView, SessionSummary};
