//! Session registry with per-session single-writer mutation and optional
//! on-disk persistence.
//!
//! Each persisted session lives in `<root>/<id>/`: `events.jsonl` is the
//! append-only event log and `snapshot.json` a periodic copy of the
//! [`SessionState`]. Loading starts from the snapshot and replays the
//! events after it.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use btsred::ExperimentConfig;

use crate::error::{Result, ServiceError};
use crate::session::{Event, ObserveRequest, Session, SessionState};

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Handle {
    latest: RwLock<Arc<Session>>,
    /// Held for the whole of a mutation; owns the log file when persisted.
    writer: Mutex<Option<File>>,
    dir: Option<PathBuf>,
}

pub struct Store {
    root: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Handle>>>,
    snapshot_every: u64,
}

/// Outcome of an observe call.
pub struct Observed {
    pub session: Arc<Session>,
    /// False when the idempotency key had already been applied.
    pub applied: bool,
}

fn poisoned<T>(_: T) -> ServiceError {
    ServiceError::Internal("session lock poisoned".into())
}

fn append_event(file: &mut File, event: &Event) -> Result<()> {
    let mut line = serde_json::to_vec(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}

fn write_snapshot(dir: &Path, state: &SessionState) -> Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let mut f = File::create(&tmp)?;
    f.write_all(&state.to_bytes()?)?;
    f.sync_all()?;
    fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}

/// Reads the event log; a torn final line from an interrupted append is dropped.
fn read_events(path: &Path) -> Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), "ignoring torn final event");
            }
            Err(e) => {
                return Err(ServiceError::Storage(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(events)
}

/// Rebuilds a session from its directory.
pub fn load_session(dir: &Path) -> Result<Session> {
    let events = read_events(&dir.join(EVENTS_FILE))?;
    let snapshot = dir.join(SNAPSHOT_FILE);
    let mut session = if snapshot.exists() {
        Session::from_state(SessionState::from_bytes(&fs::read(&snapshot)?)?)?
    } else {
        let first = events
            .first()
            .ok_or_else(|| ServiceError::Storage(format!("{}: empty event log", dir.display())))?;
        Session::from_creation(first)?
    };
    let start = session.state().last_seq;
    for event in events.iter().filter(|e| e.seq > start) {
        session = session.apply(event)?;
    }
    Ok(session)
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            sessions: RwLock::new(HashMap::new()),
            snapshot_every: 10,
        }
    }

    /// Opens (creating if needed) a data directory and loads every session in it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join(EVENTS_FILE).exists() {
                continue;
            }
            let session = load_session(&dir)?;
            let file = OpenOptions::new().append(true).open(dir.join(EVENTS_FILE))?;
            sessions.insert(
                session.id().to_string(),
                Arc::new(Handle {
                    latest: RwLock::new(Arc::new(session)),
                    writer: Mutex::new(Some(file)),
                    dir: Some(dir),
                }),
            );
        }
        Ok(Self {
            root: Some(root),
            sessions: RwLock::new(sessions),
            snapshot_every: 10,
        })
    }

    /// Events between snapshots; at least 1.
    pub fn with_snapshot_every(mut self, every: u64) -> Self {
        self.snapshot_every = every.max(1);
        self
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .map(|s| s.keys().cloned().collect())
            .unwrap_or_default();
        ids.sort();
        ids
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>> {
        self.sessions
            .read()
            .map_err(poisoned)?
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn create(&self, config: ExperimentConfig) -> Result<Arc<Session>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let event = Session::creation_event(id.clone(), config, now_ms())?;
        let session = Arc::new(Session::from_creation(&event)?);
        let (file, dir) = match &self.root {
            Some(root) => {
                let dir = root.join(&id);
                fs::create_dir(&dir)?;
                let mut file = OpenOptions::new()
                    .create_new(true)
                    .append(true)
                    .open(dir.join(EVENTS_FILE))?;
                append_event(&mut file, &event)?;
                (Some(file), Some(dir))
            }
            None => (None, None),
        };
        let handle = Arc::new(Handle {
            latest: RwLock::new(session.clone()),
            writer: Mutex::new(file),
            dir,
        });
        self.sessions.write().map_err(poisoned)?.insert(id.clone(), handle);
        tracing::info!(session = %id, "created session");
        Ok(session)
    }

    /// Latest state; never waits for an in-flight mutation.
    pub fn get(&self, id: &str) -> Result<Arc<Session>> {
        Ok(self.handle(id)?.latest.read().map_err(poisoned)?.clone())
    }

    /// Runs `make` under the session's writer lock and persists the event it returns.
    fn mutate(&self, id: &str, make: impl FnOnce(&Session) -> Result<Option<Event>>) -> Result<(Arc<Session>, bool)> {
        let handle = self.handle(id)?;
        let mut writer = handle.writer.lock().map_err(poisoned)?;
        let current = handle.latest.read().map_err(poisoned)?.clone();
        let Some(event) = make(&current)? else {
            return Ok((current, false));
        };
        let next = Arc::new(current.apply(&event)?);
        if let Some(file) = writer.as_mut() {
            append_event(file, &event)?;
            if event.seq % self.snapshot_every == 0 {
                if let Some(dir) = &handle.dir {
                    write_snapshot(dir, next.state())?;
                }
            }
        }
        *handle.latest.write().map_err(poisoned)? = next.clone();
        tracing::info!(session = %id, seq = event.seq, "applied event");
        Ok((next, true))
    }

    pub fn suggest(&self, id: &str) -> Result<Arc<Session>> {
        self.mutate(id, |s| s.suggest(now_ms()).map(Some)).map(|(s, _)| s)
    }

    pub fn observe(&self, id: &str, request: ObserveRequest) -> Result<Observed> {
        let (session, applied) = self.mutate(id, |s| s.observe(request, now_ms()))?;
        Ok(Observed { session, applied })
    }

    pub fn update_weight(&self, id: &str, omega: f64) -> Result<Arc<Session>> {
        self.mutate(id, |s| s.update_weight(omega, now_ms()).map(Some))
            .map(|(s, _)| s)
    }

    /// Writes a snapshot of every persisted session now.
    pub fn checkpoint(&self) -> Result<()> {
        let handles: Vec<Arc<Handle>> = self.sessions.read().map_err(poisoned)?.values().cloned().collect();
        for handle in handles {
            let _writer = handle.writer.lock().map_err(poisoned)?;
            if let Some(dir) = &handle.dir {
                let latest = handle.latest.read().map_err(poisoned)?.clone();
                write_snapshot(dir, latest.state())?;
            }
        }
        Ok(())
    }
}
