//! Session event log. Every event carries the snapshot taken right after it,
//! so any snapshot a client has seen can be rebuilt from the log.

use imfbo_core::campaign::{IterationRecord, PolicyChange};
use serde::{Deserialize, Serialize};

use crate::snapshot::{PolicyPrompt, SessionSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    Created { snapshot: SessionSnapshot },
    IterationCompleted { record: IterationRecord, snapshot: SessionSnapshot },
    PolicyPrompt { prompt: PolicyPrompt, snapshot: SessionSnapshot },
    PolicyApplied { changes: Vec<PolicyChange>, queued: bool, snapshot: SessionSnapshot },
    PolicyRejected { reasons: Vec<String>, snapshot: SessionSnapshot },
    Stopped { snapshot: SessionSnapshot },
    Converged { snapshot: SessionSnapshot },
}

impl Event {
    pub fn snapshot(&self) -> &SessionSnapshot {
        match self {
            Event::Created { snapshot }
            | Event::IterationCompleted { snapshot, .. }
            | Event::PolicyPrompt { snapshot, .. }
            | Event::PolicyApplied { snapshot, .. }
            | Event::PolicyRejected { snapshot, .. }
            | Event::Stopped { snapshot }
            | Event::Converged { snapshot } => snapshot,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Event::Created { .. } => "Created",
            Event::IterationCompleted { .. } => "IterationCompleted",
            Event::PolicyPrompt { .. } => "PolicyPrompt",
            Event::PolicyApplied { .. } => "PolicyApplied",
            Event::PolicyRejected { .. } => "PolicyRejected",
            Event::Stopped { .. } => "Stopped",
            Event::Converged { .. } => "Converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    /// Position in the session's log, starting at 0.
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}
