//! Interactive sessions: an append-only event log per session, a
//! clarification channel, and a cursor watch for long-polling readers.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use mhrag_core::agent::{AgentState, Budgets, ClarifyError, Event, InteractiveChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    AwaitingClarification,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingClarification {
    pub id: u64,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEnvelope {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub status: Status,
    /// Cursor of the next event to be written.
    pub cursor: usize,
    /// An episode is in progress.
    pub running: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_clarification: Option<PendingClarification>,
}

/// One line of a session's event file and one item of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub cursor: usize,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("an episode is already running in this session")]
    Busy,
    #[error(transparent)]
    Clarify(#[from] ClarifyError),
    #[error("{path}: {message}")]
    Storage { path: PathBuf, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    session_id: String,
    created_at: DateTime<Utc>,
}

struct Inner {
    events: Vec<Event>,
    /// Taken while an episode runs.
    state: Option<AgentState>,
    running: bool,
    closed: bool,
    pending: Option<PendingClarification>,
    log: Option<File>,
}

pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub channel: Arc<InteractiveChannel>,
    inner: Mutex<Inner>,
    /// Event count and closed flag.
    count: watch::Sender<(usize, bool)>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

fn pending_after(events: &[Event]) -> Option<PendingClarification> {
    let mut pending = None;
    for e in events {
        match e {
            Event::ClarificationRequest { id, question } => {
                pending = Some(PendingClarification {
                    id: *id,
                    question: question.clone(),
                })
            }
            Event::ClarificationAnswer { id, .. }
                if pending.as_ref().is_some_and(|p| p.id == *id) =>
            {
                pending = None
            }
            _ => {}
        }
    }
    pending
}

/// The last episode ended with a final answer (or none was started).
fn episode_complete(events: &[Event]) -> bool {
    match events
        .iter()
        .rposition(|e| matches!(e, Event::UserQuery { .. }))
    {
        None => true,
        Some(i) => events[i..]
            .iter()
            .any(|e| matches!(e, Event::FinalAnswer { .. })),
    }
}

impl Session {
    fn new(
        id: String,
        created_at: DateTime<Utc>,
        budgets: Budgets,
        clarification_timeout: Duration,
        events: Vec<Event>,
        log: Option<File>,
    ) -> Self {
        let closed = !episode_complete(&events);
        let (count, _) = watch::channel((events.len(), closed));
        Self {
            channel: Arc::new(InteractiveChannel::new(clarification_timeout)),
            inner: Mutex::new(Inner {
                state: Some(AgentState::resume(id.clone(), budgets, events.clone())),
                pending: pending_after(&events),
                events,
                running: false,
                closed,
                log,
            }),
            count,
            id,
            created_at,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn envelope(&self) -> SessionEnvelope {
        let inner = self.lock();
        let status = if inner.closed {
            Status::Closed
        } else if inner.pending.is_some() {
            Status::AwaitingClarification
        } else {
            Status::Open
        };
        SessionEnvelope {
            session_id: self.id.clone(),
            created_at: self.created_at,
            status,
            cursor: inner.events.len(),
            running: inner.running,
            pending_clarification: inner.pending.clone(),
        }
    }

    /// Appends to the log and wakes readers. Returns the event's cursor.
    pub fn append(&self, event: Event) -> usize {
        let mut inner = self.lock();
        let cursor = inner.events.len();
        if let Some(f) = inner.log.as_mut() {
            let line = serde_json::to_string(&LoggedEvent {
                cursor,
                event: event.clone(),
            })
            .expect("event serializes");
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                tracing::error!(session = %self.id, error = %e, "event log write failed");
            }
        }
        match &event {
            Event::ClarificationRequest { id, question } => {
                inner.pending = Some(PendingClarification {
                    id: *id,
                    question: question.clone(),
                })
            }
            Event::ClarificationAnswer { id, .. }
                if inner.pending.as_ref().is_some_and(|p| p.id == *id) =>
            {
                inner.pending = None;
            }
            _ => {}
        }
        inner.events.push(event);
        self.count.send_replace((inner.events.len(), inner.closed));
        cursor
    }

    /// Events from `cursor` on, or `None` if the cursor is past the end.
    pub fn events_from(&self, cursor: usize) -> Option<Vec<LoggedEvent>> {
        let inner = self.lock();
        let tail = inner.events.get(cursor..)?;
        Some(
            tail.iter()
                .enumerate()
                .map(|(i, e)| LoggedEvent {
                    cursor: cursor + i,
                    event: e.clone(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Waits until more than `cursor` events exist, the session closes or
    /// `timeout` elapses.
    pub async fn wait_beyond(&self, cursor: usize, timeout: Duration) {
        let mut rx = self.count.subscribe();
        let _ =
            tokio::time::timeout(timeout, rx.wait_for(|(n, closed)| *n > cursor || *closed)).await;
    }

    /// Marks the session busy and hands out its agent state.
    pub fn begin_episode(&self) -> Result<AgentState, SessionError> {
        let mut inner = self.lock();
        if inner.closed {
            return Err(SessionError::Closed);
        }
        if inner.running {
            return Err(SessionError::Busy);
        }
        let state = inner.state.take().expect("idle session holds its state");
        inner.running = true;
        Ok(state)
    }

    pub fn end_episode(&self, state: AgentState) {
        let mut inner = self.lock();
        inner.state = Some(state);
        inner.running = false;
        self.count.send_replace((inner.events.len(), inner.closed));
    }

    /// Recovers after a crashed episode: the state is rebuilt from the log.
    pub fn abort_episode(&self, budgets: Budgets) {
        let mut inner = self.lock();
        inner.state = Some(AgentState::resume(
            self.id.clone(),
            budgets,
            inner.events.clone(),
        ));
        inner.running = false;
        inner.pending = None;
    }

    pub fn clarify(&self, id: Option<u64>, text: &str) -> Result<u64, SessionError> {
        if self.lock().closed {
            return Err(SessionError::Closed);
        }
        Ok(self.channel.answer(id, text)?)
    }

    pub fn close(&self) {
        let mut inner = self.lock();
        inner.closed = true;
        self.channel.close();
        self.count.send_replace((inner.events.len(), true));
    }
}

/// All sessions of a server, optionally persisted under a directory as
/// `<id>.session.json` plus an append-only `<id>.events.jsonl`.
#[derive(Debug)]
pub struct SessionStore {
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    dir: Option<PathBuf>,
    budgets: Budgets,
    clarification_timeout: Duration,
}

fn storage_err(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Storage {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl SessionStore {
    pub fn in_memory(budgets: Budgets, clarification_timeout: Duration) -> Self {
        Self {
            sessions: Mutex::new(BTreeMap::new()),
            dir: None,
            budgets,
            clarification_timeout,
        }
    }

    /// Opens `dir`, reloading the sessions stored there. Sessions whose
    /// last episode never finished come back closed.
    pub fn open(
        dir: &Path,
        budgets: Budgets,
        clarification_timeout: Duration,
    ) -> Result<Self, SessionError> {
        std::fs::create_dir_all(dir).map_err(|e| storage_err(dir, e))?;
        let store = Self {
            dir: Some(dir.to_path_buf()),
            ..Self::in_memory(budgets, clarification_timeout)
        };
        let mut headers: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| storage_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".session.json"))
            })
            .collect();
        headers.sort();
        for path in headers {
            let text = std::fs::read_to_string(&path).map_err(|e| storage_err(&path, e))?;
            let header: Header = serde_json::from_str(&text).map_err(|e| storage_err(&path, e))?;
            let log_path = dir.join(format!("{}.events.jsonl", header.session_id));
            let events = read_log(&log_path)?;
            let log = append_handle(&log_path)?;
            let session = Session::new(
                header.session_id.clone(),
                header.created_at,
                budgets,
                clarification_timeout,
                events,
                Some(log),
            );
            store.lock().insert(header.session_id, Arc::new(session));
        }
        Ok(store)
    }

    fn lock(&self) -> MutexGuard<'_, BTreeMap<String, Arc<Session>>> {
        self.sessions.lock().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn create(&self) -> Result<Arc<Session>, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = Utc::now();
        let log = match &self.dir {
            Some(dir) => {
                let header_path = dir.join(format!("{id}.session.json"));
                let header = Header {
                    session_id: id.clone(),
                    created_at,
                };
                std::fs::write(
                    &header_path,
                    serde_json::to_vec(&header).expect("header serializes"),
                )
                .map_err(|e| storage_err(&header_path, e))?;
                Some(append_handle(&dir.join(format!("{id}.events.jsonl")))?)
            }
            None => None,
        };
        let session = Arc::new(Session::new(
            id.clone(),
            created_at,
            self.budgets,
            self.clarification_timeout,
            Vec::new(),
            log,
        ));
        self.lock().insert(id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.lock().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn budgets(&self) -> Budgets {
        self.budgets
    }

    pub fn close_all(&self) {
        for s in self.lock().values() {
            s.close();
        }
    }
}

fn append_handle(path: &Path) -> Result<File, SessionError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage_err(path, e))
}

/// Reads a session log, stopping at the first torn or out-of-sequence line.
fn read_log(path: &Path) -> Result<Vec<Event>, SessionError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(storage_err(path, e)),
    };
    let mut events = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| storage_err(path, e))?;
        match serde_json::from_str::<LoggedEvent>(&line) {
            Ok(l) if l.cursor == events.len() => events.push(l.event),
            _ => {
                tracing::warn!(path = %path.display(), cursor = events.len(), "event log truncated");
                break;
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mhrag_core::agent::ReplySource;

    fn store() -> SessionStore {
        SessionStore::in_memory(Budgets::default(), Duration::from_secs(5))
    }

    fn request(id: u64) -> Event {
        Event::ClarificationRequest {
            id,
            question: "Which year?".into(),
        }
    }

    fn answer(id: u64) -> Event {
        Event::ClarificationAnswer {
            id,
            text: "2015".into(),
            source: ReplySource::User,
        }
    }

    #[test]
    fn status_tracks_unanswered_request() {
        let s = store().create().unwrap();
        assert_eq!(s.envelope().status, Status::Open);
        s.append(Event::UserQuery { text: "q".into() });
        assert_eq!(s.append(request(1)), 1);
        let env = s.envelope();
        assert_eq!(env.status, Status::AwaitingClarification);
        assert_eq!(env.pending_clarification.unwrap().id, 1);
        s.append(answer(1));
        assert_eq!(s.envelope().status, Status::Open);
        assert_eq!(s.envelope().cursor, 3);
        s.close();
        assert_eq!(s.envelope().status, Status::Closed);
        assert!(matches!(s.clarify(None, "x"), Err(SessionError::Closed)));
    }

    #[test]
    fn cursors_are_gap_free() {
        let s = store().create().unwrap();
        for i in 0..5 {
            s.append(Event::UserQuery {
                text: format!("q{i}"),
            });
        }
        let tail = s.events_from(2).unwrap();
        assert_eq!(tail.iter().map(|e| e.cursor).collect::<Vec<_>>(), [2, 3, 4]);
        assert!(s.events_from(5).unwrap().is_empty());
        assert!(s.events_from(6).is_none());
    }

    #[test]
    fn one_episode_at_a_time() {
        let s = store().create().unwrap();
        let state = s.begin_episode().unwrap();
        assert!(matches!(s.begin_episode(), Err(SessionError::Busy)));
        s.end_episode(state);
        assert!(s.begin_episode().is_ok());
    }

    #[test]
    fn persisted_sessions_reload() {
        let dir = tempfile::tempdir().unwrap();
        let budgets = Budgets::default();
        let id = {
            let st = SessionStore::open(dir.path(), budgets, Duration::from_secs(1)).unwrap();
            let s = st.create().unwrap();
            s.append(Event::UserQuery { text: "q".into() });
            s.append(request(1));
            s.id.clone()
        };
        let st = SessionStore::open(dir.path(), budgets, Duration::from_secs(1)).unwrap();
        let s = st.get(&id).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.envelope().status, Status::Closed);

        let log = dir.path().join(format!("{id}.events.jsonl"));
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        writeln!(
            f,
            "{{\"cursor\": 7, \"kind\": \"user_query\", \"text\": \"x\"}}"
        )
        .unwrap();
        let st = SessionStore::open(dir.path(), budgets, Duration::from_secs(1)).unwrap();
        assert_eq!(st.get(&id).unwrap().len(), 2);
    }

    #[test]
    fn completed_sessions_reload_open() {
        let dir = tempfile::tempdir().unwrap();
        let budgets = Budgets::default();
        let st = SessionStore::open(dir.path(), budgets, Duration::from_secs(1)).unwrap();
        let s = st.create().unwrap();
        s.append(Event::UserQuery { text: "q".into() });
        s.append(Event::FinalAnswer {
            text: "a".into(),
            confident: true,
            flags: vec![],
            citations: vec![],
        });
        let st = SessionStore::open(dir.path(), budgets, Duration::from_secs(1)).unwrap();
        assert_eq!(st.get(&s.id).unwrap().envelope().status, Status::Open);
    }

    #[tokio::test]
    async fn waiters_wake_on_append() {
        let s = store().create().unwrap();
        let s2 = s.clone();
        let t = tokio::spawn(async move {
            s2.wait_beyond(0, Duration::from_secs(10)).await;
            s2.len()
        });
        tokio::time::sleep(Duration::from_millis(20)).await;
        s.append(Event::UserQuery { text: "q".into() });
        assert_eq!(t.await.unwrap(), 1);
    }
}
