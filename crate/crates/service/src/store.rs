//! Flat-file persistence for live sessions: `<log_dir>/<id>.jsonl` trial logs and
//! `<checkpoint_dir>/<id>.<generation>.json` state snapshots. Each snapshot goes to a
//! fresh file and older generations are removed afterwards, so the newest complete
//! snapshot always survives an interrupted write.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::SessionConfig;
use crate::session::{Artifacts, Outcome, Session};
use crate::trial_log::{read_log, LogWriter};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid session id {0:?} (use 1-64 characters from [A-Za-z0-9_-])")]
    InvalidId(String),
    #[error("session {0} already exists; reconnect with resume")]
    Exists(String),
    #[error("no checkpoint for session {0}")]
    NoCheckpoint(String),
    #[error("log of session {id} holds {logged} trials but its checkpoint only {checkpointed}")]
    LogAhead { id: String, logged: usize, checkpointed: usize },
    #[error("corrupt checkpoint for session {0}: {1}")]
    Corrupt(String, serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    pub log_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

pub fn validate_session_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// Writes through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

impl SessionStore {
    pub fn new(log_dir: impl Into<PathBuf>, checkpoint_dir: impl Into<PathBuf>) -> Self {
        SessionStore { log_dir: log_dir.into(), checkpoint_dir: checkpoint_dir.into() }
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.log_dir.join(format!("{id}.jsonl"))
    }

    pub fn checkpoint_path(&self, id: &str, generation: u64) -> PathBuf {
        self.checkpoint_dir.join(format!("{id}.{generation}.json"))
    }

    /// Existing snapshot generations of `id`, oldest first.
    pub fn checkpoint_generations(&self, id: &str) -> std::io::Result<Vec<u64>> {
        let entries = match std::fs::read_dir(&self.checkpoint_dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let prefix = format!("{id}.");
        let mut gens = Vec::new();
        for entry in entries {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(g) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".json")).and_then(|g| g.parse().ok()) {
                gens.push(g);
            }
        }
        gens.sort_unstable();
        Ok(gens)
    }

    /// Creates a new session, or restores one from its checkpoint when `resume` is set.
    pub fn open(
        &self,
        id: &str,
        resume: bool,
        artifacts: Arc<Artifacts>,
        cfg: Arc<SessionConfig>,
    ) -> Result<(Session, LogWriter), StoreError> {
        validate_session_id(id)?;
        let gens = self.checkpoint_generations(id)?;
        let log = self.log_path(id);
        let session = if resume {
            let s = self.restore_latest(id, &gens, artifacts, cfg)?;
            if log.exists() {
                let logged = read_log(&log)?.records.iter().filter(|r| r.session_id == id).count();
                if logged > s.state().completed {
                    return Err(StoreError::LogAhead { id: id.to_string(), logged, checkpointed: s.state().completed });
                }
            }
            s
        } else {
            if !gens.is_empty() || log.exists() {
                return Err(StoreError::Exists(id.to_string()));
            }
            Session::new(id, artifacts, cfg)
        };
        let writer = LogWriter::open(&log)?;
        Ok((session, writer))
    }

    fn restore_latest(&self, id: &str, gens: &[u64], artifacts: Arc<Artifacts>, cfg: Arc<SessionConfig>) -> Result<Session, StoreError> {
        let mut newest_error = None;
        for &g in gens.iter().rev() {
            let text = std::fs::read_to_string(self.checkpoint_path(id, g))?;
            match Session::restore(&text, artifacts.clone(), cfg.clone()) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    log::warn!("session {id}: skipping unreadable checkpoint generation {g}: {e}");
                    newest_error.get_or_insert(e);
                }
            }
        }
        Err(match newest_error {
            Some(e) => StoreError::Corrupt(id.to_string(), e),
            None => StoreError::NoCheckpoint(id.to_string()),
        })
    }

    /// Appends the outcome's records, then checkpoints if requested.
    pub fn commit(&self, session: &Session, writer: &mut LogWriter, outcome: &Outcome) -> std::io::Result<()> {
        for r in &outcome.records {
            writer.append(r)?;
        }
        if outcome.checkpoint {
            self.checkpoint(session)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, session: &Session) -> std::io::Result<()> {
        let id = session.session_id();
        let gens = self.checkpoint_generations(id)?;
        let next = gens.last().map_or(0, |g| g + 1);
        std::fs::create_dir_all(&self.checkpoint_dir)?;
        let mut f = std::fs::OpenOptions::new().write(true).create_new(true).open(self.checkpoint_path(id, next))?;
        f.write_all(session.checkpoint().as_bytes())?;
        drop(f);
        for g in gens {
            std::fs::remove_file(self.checkpoint_path(id, g))?;
        }
        Ok(())
    }
}
