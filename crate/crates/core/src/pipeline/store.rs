use super::SessionState;
use crate::raster::RasterImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {id} failed its integrity check: {detail}")]
    Integrity { id: String, detail: String },
    #[error("session store: {0}")]
    Io(String),
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    /// SHA-256 of the compact JSON of `session`.
    digest: String,
    guidance: Option<BlobRef>,
    session: Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_of(session: &Value) -> String {
    sha256_hex(&serde_json::to_vec(session).expect("JSON values serialize"))
}

/// Directory of `{id}.json` records with `{id}.guidance.png` blobs.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }

    pub fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| StoreError::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, self.dir.join(name)).map_err(|e| StoreError::Io(format!("{name}: {e}")))
    }

    pub fn save(&self, session: &SessionState) -> Result<(), StoreError> {
        if !Self::valid_id(&session.id) {
            return Err(StoreError::Io(format!("invalid session id {:?}", session.id)));
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| StoreError::Io(format!("{}: {e}", self.dir.display())))?;
        let guidance = match &session.guidance {
            Some(img) => {
                let png = img.to_png().map_err(|e| StoreError::Io(e.to_string()))?;
                let file = format!("{}.guidance.png", session.id);
                self.write_atomic(&file, &png)?;
                Some(BlobRef {
                    file,
                    sha256: sha256_hex(&png),
                })
            }
            None => None,
        };
        let value = serde_json::to_value(session).map_err(|e| StoreError::Io(e.to_string()))?;
        let record = Record {
            digest: digest_of(&value),
            guidance,
            session: value,
        };
        let text = serde_json::to_vec_pretty(&record).map_err(|e| StoreError::Io(e.to_string()))?;
        self.write_atomic(&format!("{}.json", session.id), &text)
    }

    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        if !Self::valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let path = self.record_path(id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(StoreError::Io(format!("{}: {e}", path.display()))),
        };
        let integrity = |detail: String| StoreError::Integrity { id: id.to_string(), detail };
        let record: Record = serde_json::from_slice(&bytes).map_err(|e| integrity(format!("unreadable record: {e}")))?;
        let actual = digest_of(&record.session);
        if actual != record.digest {
            return Err(integrity(format!("digest mismatch: recorded {}, computed {actual}", record.digest)));
        }
        let mut session: SessionState =
            serde_json::from_value(record.session).map_err(|e| integrity(format!("malformed session: {e}")))?;
        if session.id != id {
            return Err(integrity(format!("record holds session {}", session.id)));
        }
        if let Some(blob) = record.guidance {
            let png = std::fs::read(self.dir.join(&blob.file)).map_err(|e| integrity(format!("{}: {e}", blob.file)))?;
            let actual = sha256_hex(&png);
            if actual != blob.sha256 {
                return Err(integrity(format!("{} digest mismatch: recorded {}, computed {actual}", blob.file, blob.sha256)));
            }
            session.guidance = Some(RasterImage::from_png(&png).map_err(|e| integrity(format!("{}: {e}", blob.file)))?);
        }
        Ok(session)
    }

    /// Ids of every stored record, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io(e.to_string())),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
            .filter(|id| Self::valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}
