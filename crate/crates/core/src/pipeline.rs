//! Session persistence: append-only JSON-lines event logs, replay, and a
//! store that serializes writers per session.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::clarification::{EngineError, EventSink, SessionEngine};
use crate::domain::{transition, ClarificationResponses, DialogueState, PipelineEvent, Status, UserPrompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub sequence_no: u64,
    pub event: PipelineEvent,
    pub wall_time: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable serialization used to compare live and replayed states.
pub fn canonical_json(state: &DialogueState) -> String {
    serde_json::to_string(state).expect("dialogue state serializes")
}

/// Rebuilds a session from its events.
pub fn replay(events: &[SessionEvent]) -> Result<DialogueState, ReplayError> {
    let first = events.first().ok_or_else(|| ReplayError::CorruptLog("log is empty".into()))?;
    let PipelineEvent::PromptSubmitted { prompt, max_rounds } = &first.event else {
        return Err(ReplayError::CorruptLog(format!(
            "first event is {}, expected PromptSubmitted",
            first.event.name()
        )));
    };
    let mut state = DialogueState::new(first.session_id.clone(), prompt.clone(), *max_rounds);
    for (i, rec) in events.iter().enumerate() {
        if rec.sequence_no != i as u64 {
            return Err(ReplayError::CorruptLog(format!(
                "sequence gap: expected {i}, found {}",
                rec.sequence_no
            )));
        }
        if rec.session_id != state.session_id {
            return Err(ReplayError::CorruptLog(format!(
                "event {i} belongs to session {}",
                rec.session_id
            )));
        }
        state = transition(&state, &rec.event).map_err(|e| ReplayError::CorruptLog(format!("event {i}: {e}")))?;
    }
    Ok(state)
}

/// Reads a JSON-lines log. A final line without a trailing newline that
/// fails to parse is a torn write and is dropped.
pub fn read_log(path: &Path) -> Result<Vec<SessionEvent>, ReplayError> {
    let raw = fs::read_to_string(path)?;
    let complete = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionEvent>(line) {
            Ok(ev) => events.push(ev),
            Err(_) if i + 1 == lines.len() && !complete => {
                warn!(path = %path.display(), "dropping torn final log line");
            }
            Err(e) => return Err(ReplayError::CorruptLog(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(events)
}

/// Appends events to one session's log, fsyncing every line.
pub struct FileSink {
    file: File,
    next_seq: u64,
    snapshot: Option<Arc<RwLock<DialogueState>>>,
}

impl FileSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create_new(true).append(true).open(path)?;
        Ok(Self {
            file,
            next_seq: 0,
            snapshot: None,
        })
    }

    pub fn append_to(path: &Path, next_seq: u64) -> std::io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            file,
            next_seq,
            snapshot: None,
        })
    }

    fn mirror_into(mut self, snapshot: Arc<RwLock<DialogueState>>) -> Self {
        self.snapshot = Some(snapshot);
        self
    }
}

impl EventSink for FileSink {
    fn record(&mut self, event: &PipelineEvent, state: &DialogueState) -> Result<(), String> {
        let rec = SessionEvent {
            session_id: state.session_id.clone(),
            sequence_no: self.next_seq,
            event: event.clone(),
            wall_time: Utc::now(),
        };
        let mut line = serde_json::to_string(&rec).map_err(|e| e.to_string())?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
        self.file.sync_data().map_err(|e| e.to_string())?;
        self.next_seq += 1;
        if let Some(snapshot) = &self.snapshot {
            *snapshot.write().expect("snapshot lock") = state.clone();
        }
        Ok(())
    }
}

/// Collects events in memory with sequence numbers, as they would be logged.
#[derive(Debug, Default)]
pub struct MemoryLog {
    pub events: Vec<SessionEvent>,
    pub states: Vec<DialogueState>,
}

impl EventSink for MemoryLog {
    fn record(&mut self, event: &PipelineEvent, state: &DialogueState) -> Result<(), String> {
        self.events.push(SessionEvent {
            session_id: state.session_id.clone(),
            sequence_no: self.events.len() as u64,
            event: event.clone(),
            wall_time: Utc::now(),
        });
        self.states.push(state.clone());
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} is being updated by another request")]
    Busy(String),
    #[error("session is {0}, not awaiting clarification")]
    WrongStatus(Status),
    #[error("unknown question id {0}")]
    UnknownQuestion(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

struct SessionSlot {
    writer: Mutex<u64>,
    snapshot: Arc<RwLock<DialogueState>>,
}

/// All live sessions plus their on-disk logs under one data directory.
pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

impl SessionStore {
    /// Opens (creating if needed) the data directory and replays every log.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let events = read_log(&path)?;
            if events.is_empty() {
                continue;
            }
            let state = replay(&events)?;
            info!(session = %state.session_id, status = %state.status, events = events.len(), "recovered session");
            sessions.insert(
                state.session_id.clone(),
                Arc::new(SessionSlot {
                    writer: Mutex::new(events.len() as u64),
                    snapshot: Arc::new(RwLock::new(state)),
                }),
            );
        }
        Ok(Self {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    fn slot(&self, session_id: &str) -> Result<Arc<SessionSlot>, StoreError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(session_id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn get(&self, session_id: &str) -> Result<DialogueState, StoreError> {
        Ok(self.slot(session_id)?.snapshot.read().expect("snapshot lock").clone())
    }

    /// Starts a session and runs it until it asks questions or finishes.
    pub fn create(&self, engine: &SessionEngine, prompt_text: &str) -> Result<DialogueState, StoreError> {
        let prompt = UserPrompt::now(prompt_text).map_err(|_| StoreError::EmptyPrompt)?;
        let session_id = uuid::Uuid::new_v4().to_string();
        let initial = DialogueState::new(session_id.clone(), prompt.clone(), engine.max_rounds);
        let slot = Arc::new(SessionSlot {
            writer: Mutex::new(0),
            snapshot: Arc::new(RwLock::new(initial)),
        });
        let mut next_seq = slot.writer.lock().expect("writer lock");
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session_id.clone(), slot.clone());
        let mut sink = FileSink::create(&self.log_path(&session_id))?.mirror_into(slot.snapshot.clone());
        let result = engine.start(session_id, prompt, &mut sink);
        *next_seq = sink.next_seq;
        Ok(result?)
    }

    /// Applies the user's answers. A concurrent writer on the same session
    /// gets [`StoreError::Busy`] instead of waiting.
    pub fn respond(
        &self,
        engine: &SessionEngine,
        session_id: &str,
        answers: BTreeMap<String, String>,
    ) -> Result<DialogueState, StoreError> {
        let slot = self.slot(session_id)?;
        let mut next_seq = match slot.writer.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => return Err(StoreError::Busy(session_id.to_string())),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let state = slot.snapshot.read().expect("snapshot lock").clone();
        let Some(set) = state.pending_questions() else {
            return Err(StoreError::WrongStatus(state.status));
        };
        if let Some(unknown) = answers.keys().find(|k| set.question(k).is_none()) {
            return Err(StoreError::UnknownQuestion(unknown.clone()));
        }
        let responses = ClarificationResponses {
            answers,
            round_index: set.round_index,
        };
        let mut sink = FileSink::append_to(&self.log_path(session_id), *next_seq)?.mirror_into(slot.snapshot.clone());
        let result = engine.respond(state, responses, &mut sink);
        *next_seq = sink.next_seq;
        Ok(result?)
    }

    /// Continues sessions that were mid-stage when the process stopped.
    pub fn resume_interrupted(&self, engine: &SessionEngine) -> Vec<(String, Result<Status, StoreError>)> {
        let mut out = Vec::new();
        for id in self.session_ids() {
            let Ok(slot) = self.slot(&id) else { continue };
            let mut next_seq = slot.writer.lock().expect("writer lock");
            let state = slot.snapshot.read().expect("snapshot lock").clone();
            if matches!(
                state.status,
                Status::AwaitingUserClarification | Status::Answered | Status::Aborted
            ) {
                continue;
            }
            let result = FileSink::append_to(&self.log_path(&id), *next_seq)
                .map_err(StoreError::from)
                .and_then(|sink| {
                    let mut sink = sink.mirror_into(slot.snapshot.clone());
                    let r = engine.advance(state, &mut sink);
                    *next_seq = sink.next_seq;
                    r.map(|s| s.status).map_err(StoreError::from)
                });
            out.push((id, result));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answering::AnswererBinding;
    use crate::backend::{BackendClient, BackendConfig, ManualClock, StubTransport};
    use crate::clarification::{run_session, ClarifierBinding};
    use crate::classifier::{ClassifierBinding, ScriptedLevels};
    use crate::domain::ClarityThreshold;
    use crate::template::PromptTemplate;

    fn engine(levels: &[i64]) -> SessionEngine {
        let client = |stub: StubTransport| {
            Arc::new(BackendClient::new(BackendConfig::new("http://stub", "m"), Arc::new(stub), Arc::new(ManualClock::new())).unwrap())
        };
        SessionEngine {
            classifier: ClassifierBinding::stub(ScriptedLevels::from_ints(levels).unwrap(), ClarityThreshold::default()),
            clarifier: ClarifierBinding::with_defaults(client(StubTransport::always("1. Return what?\n2. On failure?"))),
            answerer: AnswererBinding::new(client(StubTransport::echo()), PromptTemplate::new("{context}"), "").unwrap(),
            max_rounds: 3,
        }
    }

    fn recorded(levels: &[i64]) -> MemoryLog {
        let mut log = MemoryLog::default();
        run_session(
            &engine(levels),
            "abc",
            UserPrompt::now("vague").unwrap(),
            |set| ClarificationResponses::new(set.round_index).with_answer(set.questions[0].id.clone(), "json"),
            &mut log,
        )
        .unwrap();
        log
    }

    #[test]
    fn completed_log_replays_to_answered() {
        let log = recorded(&[1, 4]);
        let state = replay(&log.events).unwrap();
        assert_eq!(state.status, Status::Answered);
        assert_eq!(canonical_json(&state), canonical_json(log.states.last().unwrap()));
    }

    #[test]
    fn truncated_mid_round_awaits_user() {
        let log = recorded(&[1, 4]);
        let cut = log
            .events
            .iter()
            .position(|e| matches!(e.event, PipelineEvent::QuestionsGenerated { .. }))
            .unwrap();
        let state = replay(&log.events[..=cut]).unwrap();
        assert_eq!(state.status, Status::AwaitingUserClarification);
    }

    #[test]
    fn sequence_gap_is_corrupt() {
        let mut log = recorded(&[4]);
        log.events.remove(1);
        assert!(matches!(replay(&log.events), Err(ReplayError::CorruptLog(_))));
        assert!(matches!(replay(&[]), Err(ReplayError::CorruptLog(_))));
    }

    #[test]
    fn illegal_event_order_is_corrupt() {
        let mut log = recorded(&[4]);
        log.events.swap(1, 2);
        log.events[1].sequence_no = 1;
        log.events[2].sequence_no = 2;
        assert!(matches!(replay(&log.events), Err(ReplayError::CorruptLog(_))));
    }

    #[test]
    fn store_round_trip_and_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(&[1, 4]);
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.create(&e, "vague prompt").unwrap();
        assert_eq!(s.status, Status::AwaitingUserClarification);
        let id = s.session_id.clone();

        assert!(matches!(
            store.respond(&e, &id, BTreeMap::from([("r9q9".to_string(), "x".to_string())])),
            Err(StoreError::UnknownQuestion(_))
        ));
        let done = store
            .respond(&e, &id, BTreeMap::from([("r1q1".to_string(), "JSON from REST endpoint".to_string())]))
            .unwrap();
        assert_eq!(done.status, Status::Answered);
        assert!(matches!(store.respond(&e, &id, BTreeMap::new()), Err(StoreError::WrongStatus(Status::Answered))));
        assert!(matches!(store.get("nope"), Err(StoreError::NotFound(_))));

        let reopened = SessionStore::open(dir.path()).unwrap();
        assert_eq!(canonical_json(&reopened.get(&id).unwrap()), canonical_json(&done));
    }

    #[test]
    fn empty_prompt_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        assert!(matches!(store.create(&engine(&[4]), "   "), Err(StoreError::EmptyPrompt)));
    }

    #[test]
    fn torn_final_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let log = recorded(&[4]);
        let mut body: String = log
            .events
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        body.push_str("{\"session_id\":\"abc\",\"seq");
        fs::write(&path, &body).unwrap();
        assert_eq!(read_log(&path).unwrap().len(), log.events.len());
        fs::write(&path, body + "\n").unwrap();
        assert!(read_log(&path).is_err());
    }

    #[test]
    fn interrupted_session_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let log = recorded(&[4]);
        // Keep only PromptSubmitted and Classified: crashed before answering.
        let body: String = log.events[..2]
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        fs::write(dir.path().join("abc.jsonl"), body).unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        assert_eq!(store.get("abc").unwrap().status, Status::Answering);
        let resumed = store.resume_interrupted(&engine(&[4]));
        assert_eq!(resumed.len(), 1);
        assert_eq!(store.get("abc").unwrap().status, Status::Answered);
        let events = read_log(&store.log_path("abc")).unwrap();
        assert_eq!(replay(&events).unwrap().status, Status::Answered);
    }
}
