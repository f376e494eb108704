use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::request::{AgentTag, ChatRequest, ChatResponse};
use super::GatewayError;

/// Short description of the request a replay record answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestDigest {
    pub agent_tag: AgentTag,
    pub backend_id: String,
    pub model_id: String,
    pub messages_sha256: String,
}

impl RequestDigest {
    pub fn of(request: &ChatRequest) -> Self {
        RequestDigest {
            agent_tag: request.agent_tag,
            backend_id: request.backend_id.clone(),
            model_id: request.model_id.clone(),
            messages_sha256: request.messages_digest(),
        }
    }
}

/// One line of the replay store file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub replay_key: String,
    pub request_digest: RequestDigest,
    pub response: ChatResponse,
}

/// Append-only map from replay key to recorded response, backed by a JSON
/// Lines file. Writes are serialized; every record reaches the file before
/// [`ReplayStore::insert`] returns.
pub struct ReplayStore {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, ChatResponse>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    /// A store with no backing file.
    pub fn in_memory() -> Self {
        ReplayStore {
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens an existing store read-only. A missing file is an empty store.
    pub fn open_read_only(path: &Path) -> Result<Self, GatewayError> {
        let entries = Self::load(path)?;
        Ok(ReplayStore {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(None),
        })
    }

    /// Opens (creating if needed) a store for appending.
    pub fn open_append(path: &Path) -> Result<Self, GatewayError> {
        let entries = Self::load(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| store_io(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| store_io(path, e))?;
        Ok(ReplayStore {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    fn load(path: &Path) -> Result<HashMap<String, ChatResponse>, GatewayError> {
        let mut entries: HashMap<String, ChatResponse> = HashMap::new();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(entries),
            Err(e) => return Err(store_io(path, e)),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                GatewayError::Store(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            match entries.get(&record.replay_key) {
                Some(existing) if *existing != record.response => {
                    return Err(GatewayError::StoreCorruption { replay_key: record.replay_key });
                }
                Some(_) => {}
                None => {
                    entries.insert(record.replay_key, record.response);
                }
            }
        }
        Ok(entries)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, replay_key: &str) -> Option<ChatResponse> {
        self.entries.lock().expect("store lock").get(replay_key).cloned()
    }

    /// Records a response. Re-inserting an identical response is a no-op; a
    /// different response under an existing key is a corruption error.
    pub fn insert(&self, request: &ChatRequest, response: &ChatResponse) -> Result<(), GatewayError> {
        let replay_key = request.replay_key();
        let mut entries = self.entries.lock().expect("store lock");
        match entries.get(&replay_key) {
            Some(existing) if existing == response => return Ok(()),
            Some(_) => return Err(GatewayError::StoreCorruption { replay_key }),
            None => {}
        }
        let mut writer = self.writer.lock().expect("writer lock");
        if let Some(file) = writer.as_mut() {
            let record = ReplayRecord {
                replay_key: replay_key.clone(),
                request_digest: RequestDigest::of(request),
                response: response.clone(),
            };
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("<store>"));
            file.write_all(line.as_bytes()).map_err(|e| store_io(path, e))?;
            file.flush().map_err(|e| store_io(path, e))?;
        } else if self.path.is_some() {
            return Err(GatewayError::Store("replay store is read-only".into()));
        }
        entries.insert(replay_key, response.clone());
        Ok(())
    }
}

fn store_io(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Store(format!("{}: {e}", path.display()))
}
