//! Content-addressed on-disk response cache.
//!
//! One file per key under the cache directory, named by the hex cache key.
//! Each file is a self-describing JSON document holding the canonical
//! request, the response, and an integrity checksum. Writes go through a
//! temp file followed by a rename, serialized per key.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, GatewayError, TokenUsage};

const ENTRY_SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    schema: u32,
    key: String,
    request: ChatRequest,
    text: String,
    usage: TokenUsage,
    /// Original backend latency, kept for auditability; replays report 0.
    #[serde(default)]
    latency_ms: u64,
    /// Hex SHA-256 of the response text; guards against torn or edited files.
    text_sha256: String,
}

fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct ResponseCache {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// Replayed response text and usage from a cache hit.
pub struct StoredResponse {
    pub text: String,
    pub usage: TokenUsage,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("create {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        locks.entry(key.to_string()).or_default().clone()
    }

    /// Returns the stored response for `key`, or `None` on miss. A corrupt
    /// entry (bad JSON, checksum mismatch, key mismatch) is evicted and
    /// reported as a miss.
    pub fn lookup(&self, key: &str) -> Option<StoredResponse> {
        let path = self.entry_path(key);
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry)
                if entry.schema == ENTRY_SCHEMA
                    && entry.key == key
                    && entry.text_sha256 == sha256_hex(&entry.text) =>
            {
                Some(StoredResponse {
                    text: entry.text,
                    usage: entry.usage,
                })
            }
            _ => {
                log::warn!("evicting corrupt cache entry {}", path.display());
                let _ = std::fs::remove_file(&path);
                None
            }
        }
    }

    /// Persists a response under `key` atomically (write-then-rename).
    pub fn store(
        &self,
        key: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let entry = CacheEntry {
            schema: ENTRY_SCHEMA,
            key: key.to_string(),
            request: request.clone(),
            text: response.text.clone(),
            usage: response.usage,
            latency_ms: response.latency_ms,
            text_sha256: sha256_hex(&response.text),
        };
        let body = serde_json::to_string_pretty(&entry)
            .map_err(|e| GatewayError::Cache(format!("serialize entry: {e}")))?;
        let final_path = self.entry_path(key);
        let tmp_path = self.dir.join(format!(".{key}.tmp"));
        std::fs::write(&tmp_path, body)
            .map_err(|e| GatewayError::Cache(format!("write {}: {e}", tmp_path.display())))?;
        std::fs::rename(&tmp_path, &final_path)
            .map_err(|e| GatewayError::Cache(format!("rename to {}: {e}", final_path.display())))?;
        Ok(())
    }

    /// Number of entries currently on disk.
    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Removes every entry.
    pub fn clear(&self) -> Result<usize, GatewayError> {
        let mut removed = 0;
        let rd = std::fs::read_dir(&self.dir)
            .map_err(|e| GatewayError::Cache(format!("read {}: {e}", self.dir.display())))?;
        for entry in rd.filter_map(|e| e.ok()) {
            if entry.path().is_file() {
                std::fs::remove_file(entry.path())
                    .map_err(|e| GatewayError::Cache(format!("remove: {e}")))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
