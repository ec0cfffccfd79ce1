//! Session hosting for interactive campaigns: lifecycle, policy intake,
//! event log, persistence and the HTTP/SSE API.

pub mod api;
pub mod error;
pub mod events;
pub mod manager;
pub mod snapshot;

pub use api::router;
pub use error::ServiceError;
pub use events::{Event, EventEnvelope};
pub use manager::{SessionId, SessionManager};
pub use snapshot::{PolicyPrompt, SessionSnapshot, POLICY_OPTIONS, SNAPSHOT_SCHEMA_VERSION};
