//! Append-only JSONL store holding every session in one file.
//!
//! Each line is an event: a session creation (full item list) or one rating.
//! Every append is a single write followed by `fsync`, and in-memory state
//! changes only after the write succeeds. On open the log is replayed; a torn
//! final line from an interrupted append is discarded.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{now_ms, Label, RatingRecord, StudySession};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { session: StudySession },
    Rating { session_id: String, record: RatingRecord },
}

pub type SharedSession = Arc<Mutex<StudySession>>;

pub struct Store {
    path: PathBuf,
    log: Mutex<File>,
    sessions: RwLock<BTreeMap<String, SharedSession>>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut sessions: BTreeMap<String, StudySession> = BTreeMap::new();
        let mut good = 0u64;
        let mut reader = BufReader::new(&mut file);
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            lineno += 1;
            let event = match serde_json::from_str::<Event>(line.trim_end()) {
                Ok(e) if line.ends_with('\n') => e,
                parsed => {
                    let mut rest = String::new();
                    reader.read_line(&mut rest)?;
                    if rest.is_empty() {
                        log::warn!("{}: dropping torn final record at line {lineno}", path.display());
                        break;
                    }
                    let why = parsed.err().map_or("missing newline".to_string(), |e| e.to_string());
                    return Err(Error::Format(format!("{}:{lineno}: {why}", path.display())));
                }
            };
            match event {
                Event::Created { session } => {
                    sessions.insert(session.session_id.clone(), session);
                }
                Event::Rating { session_id, record } => {
                    let s = sessions.get_mut(&session_id).ok_or_else(|| {
                        Error::Format(format!("{}:{lineno}: rating for unknown session", path.display()))
                    })?;
                    s.apply(record)
                        .map_err(|e| Error::Format(format!("{}:{lineno}: {e}", path.display())))?;
                }
            }
            good += n as u64;
        }
        drop(reader);
        if file.metadata()?.len() != good {
            file.set_len(good)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Store {
            path: path.to_path_buf(),
            log: Mutex::new(file),
            sessions: RwLock::new(
                sessions
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
                    .collect(),
            ),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut f = self.log.lock().expect("log lock");
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn insert(&self, session: StudySession) -> Result<SharedSession> {
        let id = session.session_id.clone();
        if self.sessions.read().expect("sessions lock").contains_key(&id) {
            return Err(Error::Config(format!("session {id} already exists")));
        }
        self.append(&Event::Created { session: session.clone() })?;
        let shared = Arc::new(Mutex::new(session));
        self.sessions.write().expect("sessions lock").insert(id, shared.clone());
        Ok(shared)
    }

    pub fn get(&self, session_id: &str) -> Result<SharedSession> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(session_id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("sessions lock").keys().cloned().collect()
    }

    /// Validates, persists, then applies one rating. Ratings for the same
    /// session are serialized by the session lock.
    pub fn rate(&self, session_id: &str, item_id: &str, judgment: Label, latency_ms: u64) -> Result<(RatingRecord, usize, bool)> {
        let shared = self.get(session_id)?;
        let mut s = shared.lock().expect("session lock");
        s.check_rating(item_id)?;
        let record = RatingRecord {
            item_id: item_id.to_string(),
            judgment,
            latency_ms,
            rated_at_ms: now_ms(),
        };
        self.append(&Event::Rating {
            session_id: session_id.to_string(),
            record: record.clone(),
        })?;
        s.apply(record.clone())?;
        Ok((record, s.cursor, s.completed))
    }

    pub fn flush(&self) -> Result<()> {
        self.log.lock().expect("log lock").sync_all()?;
        Ok(())
    }
}
