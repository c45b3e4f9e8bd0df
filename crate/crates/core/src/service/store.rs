//! One JSON document per transcript and per session, written atomically.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::transcript::{SpeakerAliases, Transcript, TranscriptRecord};

use super::session::SummarySession;
use super::{ServiceError, Stage};

pub trait SessionStore: Send + Sync {
    fn put_transcript(&self, t: &Transcript) -> Result<(), ServiceError>;
    fn get_transcript(&self, id: &str) -> Result<Transcript, ServiceError>;
    /// Stores a new session at version 1.
    fn create_session(&self, session: &mut SummarySession) -> Result<(), ServiceError>;
    fn get_session(&self, id: &str) -> Result<SummarySession, ServiceError>;
    /// Writes `session` if the stored version still equals
    /// `session.version`, then bumps the version.
    fn update_session(&self, session: &mut SummarySession) -> Result<(), ServiceError>;
}

fn storage(code: &str, msg: impl Into<String>) -> ServiceError {
    ServiceError::new(code, Stage::Storage, msg)
}

/// Ids become file names, so only a safe character set is accepted.
pub fn check_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::new("INVALID_ID", Stage::Request, format!("invalid id {id:?}")))
    }
}

pub struct FileStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        for sub in ["transcripts", "sessions"] {
            std::fs::create_dir_all(root.join(sub)).map_err(|e| storage("STORE_UNAVAILABLE", format!("{}: {e}", root.display())))?;
        }
        Ok(Self { root, write_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, id: &str) -> Result<PathBuf, ServiceError> {
        check_id(id)?;
        Ok(self.root.join(kind).join(format!("{id}.json")))
    }

    fn read(&self, kind: &str, id: &str) -> Result<Vec<u8>, ServiceError> {
        let path = self.path(kind, id)?;
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::new("NOT_FOUND", Stage::Storage, format!("{} {id} not found", &kind[..kind.len() - 1])),
            _ => storage("STORE_UNAVAILABLE", e.to_string()),
        })
    }

    fn write(&self, kind: &str, id: &str, bytes: &[u8]) -> Result<(), ServiceError> {
        crate::util::atomic_write(&self.path(kind, id)?, bytes).map_err(|e| storage("STORE_UNAVAILABLE", e.to_string()))
    }

    fn read_session(&self, id: &str) -> Result<SummarySession, ServiceError> {
        serde_json::from_slice(&self.read("sessions", id)?).map_err(|e| storage("CORRUPT_DOCUMENT", e.to_string()))
    }

    fn write_session(&self, s: &SummarySession) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(s).map_err(|e| storage("CORRUPT_DOCUMENT", e.to_string()))?;
        self.write("sessions", &s.session_id, &bytes)
    }
}

impl SessionStore for FileStore {
    fn put_transcript(&self, t: &Transcript) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(&TranscriptRecord::from(t)).map_err(|e| storage("CORRUPT_DOCUMENT", e.to_string()))?;
        self.write("transcripts", &t.id, &bytes)
    }

    fn get_transcript(&self, id: &str) -> Result<Transcript, ServiceError> {
        let rec: TranscriptRecord =
            serde_json::from_slice(&self.read("transcripts", id)?).map_err(|e| storage("CORRUPT_DOCUMENT", e.to_string()))?;
        rec.into_transcript(&SpeakerAliases::default()).map_err(|e| storage("CORRUPT_DOCUMENT", e.to_string()))
    }

    fn create_session(&self, session: &mut SummarySession) -> Result<(), ServiceError> {
        let _guard = self.write_lock.lock().expect("store lock");
        if self.path("sessions", &session.session_id)?.exists() {
            return Err(storage("VERSION_CONFLICT", format!("session {} already exists", session.session_id)));
        }
        session.version = 1;
        self.write_session(session)
    }

    fn get_session(&self, id: &str) -> Result<SummarySession, ServiceError> {
        self.read_session(id)
    }

    fn update_session(&self, session: &mut SummarySession) -> Result<(), ServiceError> {
        let _guard = self.write_lock.lock().expect("store lock");
        let current = self.read_session(&session.session_id)?;
        if current.version != session.version {
            return Err(storage(
                "VERSION_CONFLICT",
                format!("session {} is at version {}, update was based on {}", session.session_id, current.version, session.version),
            ));
        }
        session.version += 1;
        if let Err(e) = self.write_session(session) {
            session.version -= 1;
            return Err(e);
        }
        Ok(())
    }
}

/// Load, modify and write back, retrying on version conflicts.
pub fn modify_session<T>(
    store: &dyn SessionStore,
    id: &str,
    mut f: impl FnMut(&mut SummarySession) -> Result<T, ServiceError>,
) -> Result<(T, SummarySession), ServiceError> {
    const ATTEMPTS: usize = 5;
    let mut last = None;
    for _ in 0..ATTEMPTS {
        let mut s = store.get_session(id)?;
        let out = f(&mut s)?;
        match store.update_session(&mut s) {
            Ok(()) => return Ok((out, s)),
            Err(e) if e.code == "VERSION_CONFLICT" => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
