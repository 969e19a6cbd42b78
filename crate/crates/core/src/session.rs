//! Human probe sessions: each verdict a person records while probing the
//! model, with a running accuracy over verdicts on gold-labeled claims.
//!
//! With a directory configured, each session is an append-only JSON-lines
//! file `<id>.jsonl`; reopening the store replays them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VerificationLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub claim_id: u64,
    /// Surface token index the person masked, when reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_text: Option<String>,
    /// Predictions that were on screen, best first.
    #[serde(default)]
    pub shown: Vec<String>,
    pub verdict: VerificationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<VerificationLabel>,
    pub timestamp_ms: u64,
}

impl ProbeRecord {
    pub fn is_correct(&self) -> Option<bool> {
        self.gold.map(|g| g == self.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSession {
    pub session_id: String,
    pub created_ms: u64,
    pub records: Vec<ProbeRecord>,
    /// Verdicts on gold-labeled claims.
    pub scored: usize,
    pub correct: usize,
    pub running_accuracy: f64,
}

impl ProbeSession {
    fn new(session_id: String, created_ms: u64) -> Self {
        ProbeSession {
            session_id,
            created_ms,
            records: Vec::new(),
            scored: 0,
            correct: 0,
            running_accuracy: 0.0,
        }
    }

    fn push(&mut self, rec: ProbeRecord) {
        if let Some(ok) = rec.is_correct() {
            self.scored += 1;
            self.correct += usize::from(ok);
            self.running_accuracy = self.correct as f64 / self.scored as f64;
        }
        self.records.push(rec);
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Created { session_id: String, created_ms: u64 },
    Probe(ProbeRecord),
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Session storage; each session is locked independently.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<ProbeSession>>>>,
    counter: AtomicU64,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a persistent store and replays existing logs.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let s = replay(&path)?;
                sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(SessionStore {
            dir: Some(dir),
            counter: AtomicU64::new(sessions.len() as u64),
            sessions: Mutex::new(sessions),
        })
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, line: &LogLine) -> Result<()> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let mut bytes = serde_json::to_vec(line)?;
        bytes.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    pub fn create(&self) -> Result<ProbeSession> {
        let created_ms = now_ms();
        let mut map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let id = loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("s{created_ms:x}-{n}");
            if !map.contains_key(&id) {
                break id;
            }
        };
        self.append(
            &id,
            &LogLine::Created {
                session_id: id.clone(),
                created_ms,
            },
        )?;
        let s = ProbeSession::new(id.clone(), created_ms);
        map.insert(id, Arc::new(Mutex::new(s.clone())));
        Ok(s)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<ProbeSession>>> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn get(&self, id: &str) -> Result<ProbeSession> {
        let h = self.handle(id)?;
        let s = h.lock().unwrap_or_else(|p| p.into_inner()).clone();
        Ok(s)
    }

    /// Logs a verdict and returns the updated session.
    pub fn record(&self, id: &str, rec: ProbeRecord) -> Result<ProbeSession> {
        let h = self.handle(id)?;
        let mut s = h.lock().unwrap_or_else(|p| p.into_inner());
        self.append(id, &LogLine::Probe(rec.clone()))?;
        s.push(rec);
        Ok(s.clone())
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn replay(path: &Path) -> Result<ProbeSession> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut session: Option<ProbeSession> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Record {
            line: i + 1,
            message: format!("{}: {m}", path.display()),
        };
        match serde_json::from_str::<LogLine>(&line).map_err(|e| bad(e.to_string()))? {
            LogLine::Created {
                session_id,
                created_ms,
            } if session.is_none() => session = Some(ProbeSession::new(session_id, created_ms)),
            LogLine::Created { .. } => return Err(bad("repeated header".into())),
            LogLine::Probe(rec) => session
                .as_mut()
                .ok_or_else(|| bad("probe before header".into()))?
                .push(rec),
        }
    }
    session.ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))
}
