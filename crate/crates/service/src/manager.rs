//! Session registry and the per-session state machine.
//!
//! Each session has one writer at a time: either an `advance` loop or a
//! policy submission. Submissions that arrive while an advance is running are
//! queued and applied at the next step boundary. Readers always see the last
//! committed snapshot.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use imfbo_core::campaign::{
    apply_policy_batch, initialize, observations_csv, step, CampaignConfig, CampaignMode, CampaignState, FieldIssue,
    PolicyChange, PromptReason, Status, StepOutcome,
};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::error::{Result, ServiceError};
use crate::events::{Event, EventEnvelope};
use crate::snapshot::{SessionSnapshot, SurrogateGrids};

pub type SessionId = String;

const EVENT_CHANNEL_CAPACITY: usize = 1024;

struct Inner {
    state: CampaignState,
    surrogate: Option<SurrogateGrids>,
    log: Vec<EventEnvelope>,
}

#[derive(Default)]
struct Control {
    busy: bool,
    queue: Vec<Vec<PolicyChange>>,
}

struct Session {
    id: SessionId,
    inner: Mutex<Inner>,
    control: Mutex<Control>,
    tx: broadcast::Sender<EventEnvelope>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Result of a policy submission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyAck {
    /// True when an advance was running and the batch will be applied at the
    /// next step boundary.
    pub queued: bool,
    pub snapshot: SessionSnapshot,
}

pub struct SessionManager {
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<SessionId, Arc<Session>>>,
}

impl SessionManager {
    /// Sessions live in memory only.
    pub fn in_memory() -> Self {
        SessionManager { data_dir: None, sessions: RwLock::new(HashMap::new()) }
    }

    /// Persists every session under `dir` and loads any sessions already
    /// stored there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(imfbo_core::Error::from)?;
        let mgr = SessionManager { data_dir: Some(dir.clone()), sessions: RwLock::new(HashMap::new()) };
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(imfbo_core::Error::from)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".campaign.json")).map(String::from))
            .collect();
        ids.sort();
        for id in ids {
            match mgr.load_session(&id) {
                Ok(s) => {
                    mgr.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::new(s));
                }
                Err(e) => tracing::warn!("skipping stored session {id}: {e}"),
            }
        }
        Ok(mgr)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Arc<Session>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn state_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.campaign.json")))
    }

    fn events_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.events.jsonl")))
    }

    /// Validates `cfg`, initializes the campaign and registers it.
    pub fn create(&self, cfg: CampaignConfig) -> Result<(SessionId, SessionSnapshot)> {
        let mut issues = cfg.issues();
        if cfg.mode != CampaignMode::Interactive {
            issues.push(FieldIssue {
                field: "mode".into(),
                message: format!("sessions need mode Interactive, got {:?}", cfg.mode),
            });
        }
        if !issues.is_empty() {
            return Err(ServiceError::InvalidConfig(issues));
        }
        let state = initialize(cfg)?;
        let id = uuid::Uuid::new_v4().to_string();
        let (tx, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        let session = Arc::new(Session {
            id: id.clone(),
            inner: Mutex::new(Inner { state, surrogate: None, log: Vec::new() }),
            control: Mutex::new(Control::default()),
            tx,
        });
        let snapshot = {
            let mut inner = lock(&session.inner);
            let snapshot = SessionSnapshot::build(&id, &inner.state, None);
            self.save_state(&id, &inner.state)?;
            self.emit(&session, &mut inner, Event::Created { snapshot: snapshot.clone() })?;
            snapshot
        };
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), session);
        Ok((id, snapshot))
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionSnapshot> {
        let s = self.get(id)?;
        let inner = lock(&s.inner);
        Ok(SessionSnapshot::build(&s.id, &inner.state, inner.surrogate.clone()))
    }

    /// Full campaign document.
    pub fn export(&self, id: &str) -> Result<String> {
        let s = self.get(id)?;
        let json = lock(&s.inner).state.to_json()?;
        Ok(json)
    }

    pub fn observations_csv(&self, id: &str) -> Result<String> {
        let s = self.get(id)?;
        let csv = observations_csv(&lock(&s.inner).state)?;
        Ok(csv)
    }

    /// Event history so far plus a receiver for later events, taken
    /// atomically so nothing is missed or repeated.
    pub fn subscribe(&self, id: &str) -> Result<(Vec<EventEnvelope>, broadcast::Receiver<EventEnvelope>)> {
        let s = self.get(id)?;
        let inner = lock(&s.inner);
        Ok((inner.log.clone(), s.tx.subscribe()))
    }

    pub fn events(&self, id: &str) -> Result<Vec<EventEnvelope>> {
        Ok(lock(&self.get(id)?.inner).log.clone())
    }

    fn begin_write(&self, s: &Session) -> Result<()> {
        let mut c = lock(&s.control);
        if c.busy {
            return Err(ServiceError::Conflict("session is busy with another advance".into()));
        }
        c.busy = true;
        Ok(())
    }

    /// Applies queued batches, then releases the writer slot.
    fn finish_write(&self, s: &Session) {
        loop {
            let batch = {
                let mut c = lock(&s.control);
                if c.queue.is_empty() {
                    c.busy = false;
                    return;
                }
                c.queue.remove(0)
            };
            if let Err(e) = self.apply_batch(s, batch, true) {
                tracing::warn!("queued policy batch for {}: {e}", s.id);
            }
        }
    }

    fn drain_queue(&self, s: &Session) {
        let batches = std::mem::take(&mut lock(&s.control).queue);
        for batch in batches {
            if let Err(e) = self.apply_batch(s, batch, true) {
                tracing::warn!("queued policy batch for {}: {e}", s.id);
            }
        }
    }

    /// Runs up to `steps` iterations, returning a snapshot after each. Stops
    /// early at a policy prompt or a terminal status.
    ///
    /// This is CPU-bound; async callers should run it on a blocking thread.
    pub fn advance(&self, id: &str, steps: usize) -> Result<Vec<SessionSnapshot>> {
        let s = self.get(id)?;
        self.begin_write(&s)?;
        let out = self.advance_locked(&s, steps);
        self.finish_write(&s);
        out
    }

    fn advance_locked(&self, s: &Session, steps: usize) -> Result<Vec<SessionSnapshot>> {
        self.drain_queue(s);
        match lock(&s.inner).state.status {
            Status::Running => {}
            Status::AwaitingPolicy => {
                return Err(ServiceError::Conflict(
                    "session is awaiting a policy response; submit one before advancing".into(),
                ))
            }
            other => return Err(ServiceError::Conflict(format!("session is {other:?} and cannot advance"))),
        }
        let mut snapshots = Vec::new();
        for n in 0..steps {
            if n > 0 {
                self.drain_queue(s);
            }
            let mut state = lock(&s.inner).state.clone();
            if state.status != Status::Running {
                break;
            }
            let outcome = step(&mut state)?;
            let mut inner = lock(&s.inner);
            match outcome {
                StepOutcome::Completed(out) => {
                    let grids = SurrogateGrids::from_step(&out, &state.config.domain, state.config.grid_resolution);
                    if state.status == Status::Running && state.stall_prompt_due() {
                        state.raise_prompt(PromptReason::Stall, None);
                    }
                    inner.state = state;
                    inner.surrogate = Some(grids);
                    self.save_state(&s.id, &inner.state)?;
                    let snapshot = self.current(s, &inner);
                    self.emit(s, &mut inner, Event::IterationCompleted { record: out.record, snapshot: snapshot.clone() })?;
                    self.emit_status(s, &mut inner, &snapshot)?;
                    snapshots.push(snapshot);
                }
                StepOutcome::FitFailed(_) => {
                    inner.state = state;
                    self.save_state(&s.id, &inner.state)?;
                    let snapshot = self.current(s, &inner);
                    self.emit_status(s, &mut inner, &snapshot)?;
                    snapshots.push(snapshot);
                }
            }
            if inner.state.status != Status::Running {
                break;
            }
        }
        Ok(snapshots)
    }

    fn current(&self, s: &Session, inner: &Inner) -> SessionSnapshot {
        SessionSnapshot::build(&s.id, &inner.state, inner.surrogate.clone())
    }

    fn emit_status(&self, s: &Session, inner: &mut Inner, snapshot: &SessionSnapshot) -> Result<()> {
        let event = match inner.state.status {
            Status::AwaitingPolicy => match &snapshot.pending_prompt {
                Some(p) => Event::PolicyPrompt { prompt: p.clone(), snapshot: snapshot.clone() },
                None => return Ok(()),
            },
            Status::Stopped => Event::Stopped { snapshot: snapshot.clone() },
            Status::Converged => Event::Converged { snapshot: snapshot.clone() },
            Status::Running => return Ok(()),
        };
        self.emit(s, inner, event)
    }

    /// Applies `changes` atomically. While an advance is running the batch is
    /// queued instead and the current snapshot is returned.
    pub fn submit_policy(&self, id: &str, changes: Vec<PolicyChange>) -> Result<PolicyAck> {
        let s = self.get(id)?;
        if changes.is_empty() {
            return Err(ServiceError::PolicyRejected(vec!["at least one change is required".into()]));
        }
        {
            let mut c = lock(&s.control);
            if c.busy {
                c.queue.push(changes);
                drop(c);
                return Ok(PolicyAck { queued: true, snapshot: self.snapshot(id)? });
            }
            c.busy = true;
        }
        let result = self.apply_batch(&s, changes, false);
        self.finish_write(&s);
        Ok(PolicyAck { queued: false, snapshot: result? })
    }

    fn apply_batch(&self, s: &Session, changes: Vec<PolicyChange>, queued: bool) -> Result<SessionSnapshot> {
        let mut inner = lock(&s.inner);
        let mut state = inner.state.clone();
        match apply_policy_batch(&mut state, changes.clone()) {
            Ok(()) => {
                inner.state = state;
                self.save_state(&s.id, &inner.state)?;
                let snapshot = self.current(s, &inner);
                let applied = inner.state.policy_log[inner.state.policy_log.len() - changes.len()..].to_vec();
                self.emit(s, &mut inner, Event::PolicyApplied { changes: applied, queued, snapshot: snapshot.clone() })?;
                self.emit_status(s, &mut inner, &snapshot)?;
                Ok(snapshot)
            }
            Err(reasons) => {
                let snapshot = self.current(s, &inner);
                self.emit(s, &mut inner, Event::PolicyRejected { reasons: reasons.clone(), snapshot })?;
                Err(ServiceError::PolicyRejected(reasons))
            }
        }
    }

    fn emit(&self, s: &Session, inner: &mut Inner, event: Event) -> Result<()> {
        let envelope = EventEnvelope { seq: inner.log.len() as u64, event };
        if let Some(path) = self.events_path(&s.id) {
            let mut line = serde_json::to_string(&envelope).map_err(imfbo_core::Error::from)?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(imfbo_core::Error::from)?;
        }
        inner.log.push(envelope.clone());
        // No receivers is fine.
        let _ = s.tx.send(envelope);
        Ok(())
    }

    fn save_state(&self, id: &str, state: &CampaignState) -> Result<()> {
        if let Some(path) = self.state_path(id) {
            state.save(&path)?;
        }
        Ok(())
    }

    /// Writes the campaign document to the data directory and returns its
    /// path. Sessions are also saved after every change.
    pub fn persist(&self, id: &str) -> Result<PathBuf> {
        let s = self.get(id)?;
        let path = self.state_path(id).ok_or_else(|| ServiceError::Conflict("no data directory configured".into()))?;
        lock(&s.inner).state.save(&path)?;
        Ok(path)
    }

    fn load_session(&self, id: &str) -> Result<Session> {
        let path = self.state_path(id).ok_or_else(|| ServiceError::Conflict("no data directory configured".into()))?;
        if !path.exists() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let state = CampaignState::load(&path)?;
        let mut log = Vec::new();
        if let Some(events) = self.events_path(id).filter(|p| p.exists()) {
            let text = fs::read_to_string(events).map_err(imfbo_core::Error::from)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                log.push(serde_json::from_str::<EventEnvelope>(line).map_err(imfbo_core::Error::from)?);
            }
        }
        let surrogate = log.last().and_then(|e| e.event.snapshot().surrogate.clone());
        let (tx, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        Ok(Session {
            id: id.to_string(),
            inner: Mutex::new(Inner { state, surrogate, log }),
            control: Mutex::new(Control::default()),
            tx,
        })
    }

    /// Reloads a session from the data directory, replacing the in-memory
    /// copy. Fails while the session has an advance in flight.
    pub fn restore(&self, id: &str) -> Result<SessionSnapshot> {
        if let Ok(existing) = self.get(id) {
            if lock(&existing.control).busy {
                return Err(ServiceError::Conflict("session is busy with another advance".into()));
            }
        }
        let session = self.load_session(id)?;
        let snapshot = {
            let inner = lock(&session.inner);
            self.current(&session, &inner)
        };
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.to_string(), Arc::new(session));
        Ok(snapshot)
    }

    #[cfg(test)]
    fn set_busy(&self, id: &str, busy: bool) {
        lock(&self.get(id).unwrap().control).busy = busy;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use imfbo_core::campaign::{PolicyKind, SCHEMA_VERSION};
    use imfbo_core::gp::McmcConfig;
    use imfbo_core::mean::MeanModelSpec;

    fn cfg(seed: u64) -> CampaignConfig {
        let mut c = CampaignConfig::problem2(MeanModelSpec::Zero).with_seed(seed);
        c.mode = CampaignMode::Interactive;
        c.surrogate.mcmc = McmcConfig { warmup: 60, samples: 30, ..McmcConfig::default() };
        c.grid_resolution = 51;
        c.stall_window = 100;
        c
    }

    #[test]
    fn create_validates_fields() {
        let mgr = SessionManager::in_memory();
        let mut bad = cfg(0);
        bad.init_count = 1;
        match mgr.create(bad) {
            Err(ServiceError::InvalidConfig(issues)) => assert!(issues.iter().any(|i| i.field == "init_count")),
            other => panic!("{other:?}"),
        }
        let mut batch = cfg(0);
        batch.mode = CampaignMode::NonInteractive;
        assert!(matches!(mgr.create(batch), Err(ServiceError::InvalidConfig(_))));
        let (a, snap) = mgr.create(cfg(0)).unwrap();
        let (b, _) = mgr.create(cfg(0)).unwrap();
        assert_ne!(a, b);
        assert_eq!(snap.iteration, 0);
        assert_eq!(snap.observations.y.len(), 10);
        assert!(snap.is_consistent());
    }

    #[test]
    fn advance_emits_snapshots() {
        let mgr = SessionManager::in_memory();
        let (id, _) = mgr.create(cfg(1)).unwrap();
        let snaps = mgr.advance(&id, 3).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_eq!(snaps.iter().map(|s| s.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(snaps.iter().all(|s| s.status == Status::Running && s.is_consistent()));
        let grids = snaps[2].surrogate.as_ref().unwrap();
        assert_eq!(grids.grid_spec.points, 51);
        let names: Vec<&str> = mgr.events(&id).unwrap().iter().map(|e| e.event.name()).collect();
        assert_eq!(names, vec!["Created", "IterationCompleted", "IterationCompleted", "IterationCompleted"]);
        assert!(matches!(mgr.advance("nope", 1), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn concurrent_advance_is_rejected_and_policies_queue() {
        let mgr = SessionManager::in_memory();
        let (id, _) = mgr.create(cfg(2)).unwrap();
        mgr.set_busy(&id, true);
        assert!(matches!(mgr.advance(&id, 1), Err(ServiceError::Conflict(_))));
        let ack = mgr
            .submit_policy(&id, vec![PolicyChange::human(PolicyKind::CostRatio { cost_ratio: 3.0 })])
            .unwrap();
        assert!(ack.queued);
        assert!(ack.snapshot.policy_log.is_empty());
        mgr.set_busy(&id, false);
        mgr.advance(&id, 1).unwrap();
        let log = mgr.snapshot(&id).unwrap().policy_log;
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].issued_at, 0);
    }

    #[test]
    fn policy_batches_are_atomic() {
        let mgr = SessionManager::in_memory();
        let (id, _) = mgr.create(cfg(3)).unwrap();
        mgr.advance(&id, 2).unwrap();
        let bad = vec![
            PolicyChange::human(PolicyKind::CostRatio { cost_ratio: 2.0 }),
            PolicyChange::human(PolicyKind::Convergence { max_iterations: 2 }),
        ];
        match mgr.submit_policy(&id, bad) {
            Err(ServiceError::PolicyRejected(r)) => assert!(r.iter().any(|m| m.contains("M_new > k"))),
            other => panic!("{other:?}"),
        }
        assert!(mgr.snapshot(&id).unwrap().policy_log.is_empty());
        let good = vec![
            PolicyChange::human(PolicyKind::Surrogate { mean: Some(MeanModelSpec::gaussian_peak()), spatial_family: None }),
            PolicyChange::human(PolicyKind::CostRatio { cost_ratio: 2.0 }),
        ];
        let ack = mgr.submit_policy(&id, good).unwrap();
        assert!(!ack.queued);
        let kinds: Vec<_> = ack.snapshot.policy_log.iter().map(|c| c.kind.clone()).collect();
        assert!(matches!(kinds[0], PolicyKind::Surrogate { .. }));
        assert_eq!(kinds[1], PolicyKind::CostRatio { cost_ratio: 2.0 });
    }

    #[test]
    fn stall_prompts_and_requires_response() {
        let mgr = SessionManager::in_memory();
        let mut c = cfg(4);
        c.stall_window = 1;
        let (id, _) = mgr.create(c).unwrap();
        let snaps = mgr.advance(&id, 15).unwrap();
        let last = snaps.last().unwrap();
        assert_eq!(last.status, Status::AwaitingPolicy, "no stall within the budget");
        let prompt = last.pending_prompt.as_ref().unwrap();
        assert_eq!(prompt.options, crate::snapshot::POLICY_OPTIONS.map(String::from).to_vec());
        assert!(matches!(mgr.advance(&id, 1), Err(ServiceError::Conflict(_))));
        let before = mgr.export(&id).unwrap();
        let ack = mgr.submit_policy(&id, vec![PolicyChange::human(PolicyKind::NoChange)]).unwrap();
        assert_eq!(ack.snapshot.status, Status::Running);
        let after: serde_json::Value = serde_json::from_str(&mgr.export(&id).unwrap()).unwrap();
        let before: serde_json::Value = serde_json::from_str(&before).unwrap();
        assert_eq!(after["config"], before["config"]);
        let names: Vec<&str> = mgr.events(&id).unwrap().iter().map(|e| e.event.name()).collect();
        assert!(names.contains(&"PolicyPrompt"));
    }

    #[test]
    fn persist_restore_replays() {
        let dir = tempfile::tempdir().unwrap();
        let mgr = SessionManager::open(dir.path()).unwrap();
        let (id, _) = mgr.create(cfg(5)).unwrap();
        mgr.advance(&id, 1).unwrap();
        let path = mgr.persist(&id).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(CampaignState::from_json(&text).unwrap().to_json().unwrap(), text);

        let other = SessionManager::open(dir.path()).unwrap();
        assert_eq!(other.ids(), vec![id.clone()]);
        assert_eq!(other.snapshot(&id).unwrap(), mgr.snapshot(&id).unwrap());
        assert_eq!(other.events(&id).unwrap(), mgr.events(&id).unwrap());
        let a = mgr.advance(&id, 2).unwrap();
        let b = other.advance(&id, 2).unwrap();
        assert_eq!(a, b);

        let future = text.replacen(&format!("\"schema_version\": {SCHEMA_VERSION}"), "\"schema_version\": 7", 1);
        fs::write(&path, future).unwrap();
        match mgr.restore(&id) {
            Err(ServiceError::Core(imfbo_core::Error::SchemaVersion { found: 7, .. })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn event_log_reconstructs_every_snapshot() {
        let mgr = SessionManager::in_memory();
        let (id, first) = mgr.create(cfg(6)).unwrap();
        let mut seen = vec![first];
        seen.extend(mgr.advance(&id, 2).unwrap());
        seen.push(
            mgr.submit_policy(&id, vec![PolicyChange::human(PolicyKind::CostRatio { cost_ratio: 1.5 })])
                .unwrap()
                .snapshot,
        );
        let logged: Vec<SessionSnapshot> = mgr.events(&id).unwrap().iter().map(|e| e.event.snapshot().clone()).collect();
        for s in &seen {
            assert!(logged.contains(s));
        }
        let seqs: Vec<u64> = mgr.events(&id).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    }
}
