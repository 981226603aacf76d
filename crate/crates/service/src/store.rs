use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::ServiceError;
use crate::session::CurationSession;

/// One JSON document per session under a data directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Session ids are restricted to `[A-Za-z0-9_-]` so they are safe path
    /// components.
    pub fn path_for(&self, id: &str) -> Option<PathBuf> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        valid.then(|| self.dir.join(format!("{id}.json")))
    }

    /// Writes to a temporary file in the same directory, syncs it, then
    /// renames it over the previous document.
    pub fn save(&self, session: &CurationSession) -> Result<(), ServiceError> {
        let path = self
            .path_for(&session.id)
            .ok_or_else(|| ServiceError::BadParams(format!("invalid session id {:?}", session.id)))?;
        let tmp = self.dir.join(format!(".{}.json.tmp", session.id));
        let ctx = |what: &str| format!("{what} {}", tmp.display());
        let mut file = fs::File::create(&tmp).map_err(|e| ServiceError::io(ctx("creating"), e))?;
        file.write_all(session.to_json().as_bytes())
            .map_err(|e| ServiceError::io(ctx("writing"), e))?;
        file.sync_all().map_err(|e| ServiceError::io(ctx("syncing"), e))?;
        drop(file);
        fs::rename(&tmp, &path).map_err(|e| ServiceError::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(&self, id: &str) -> Result<CurationSession, ServiceError> {
        let path = self
            .path_for(id)
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::SessionNotFound(id.to_string()))
            }
            Err(e) => return Err(ServiceError::io(format!("reading {}", path.display()), e)),
        };
        let session = CurationSession::from_json(&text)
            .map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display())))?;
        if session.id != id {
            return Err(ServiceError::Corrupt(format!("{} holds session {:?}", path.display(), session.id)));
        }
        Ok(session)
    }

    /// Ids of all stored sessions, sorted.
    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| ServiceError::io(format!("listing {}", self.dir.display()), e))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_suffix(".json")?;
                (!id.starts_with('.')).then(|| id.to_string())
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
