//! Persistent response cache: a directory of JSON files named by the
//! request digest, each holding the full exchange.
//!
//! [`CachedBackend`] wraps any backend with the cache and deduplicates
//! in-flight requests: two concurrent identical requests produce exactly
//! one inner call.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{cache_key, BackendError, ChatBackend, ChatExchange, ChatMessage, ModelConfig};

/// Directory-backed cache keyed by request digest.
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    /// Open (creating if needed) a cache directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| BackendError::Cache(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up a cached exchange.
    pub fn get(&self, key: &str) -> Option<ChatExchange> {
        let text = std::fs::read_to_string(self.entry_path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Store an exchange atomically (write-then-rename within the cache
    /// directory).
    pub fn put(&self, key: &str, exchange: &ChatExchange) -> Result<(), BackendError> {
        let final_path = self.entry_path(key);
        let tmp_path = self.dir.join(format!(".{key}.tmp.{}", std::process::id(),));
        let text = serde_json::to_string_pretty(exchange)
            .map_err(|e| BackendError::Cache(format!("serialize: {e}")))?;
        std::fs::write(&tmp_path, text)
            .map_err(|e| BackendError::Cache(format!("write {}: {e}", tmp_path.display())))?;
        std::fs::rename(&tmp_path, &final_path)
            .map_err(|e| BackendError::Cache(format!("rename to {}: {e}", final_path.display())))?;
        Ok(())
    }

    /// Number of entries currently on disk.
    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|entries| {
                entries
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|ext| ext == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Backend wrapper adding the persistent cache and in-flight request
/// deduplication.
pub struct CachedBackend<B> {
    inner: B,
    cache: DiskCache,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: DiskCache) -> Self {
        Self {
            inner,
            cache,
            inflight: Mutex::new(HashMap::new()),
        }
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut map = self.inflight.lock().unwrap();
        map.entry(key.to_string()).or_default().clone()
    }

    fn release_key(&self, key: &str, lock: &Arc<Mutex<()>>) {
        let mut map = self.inflight.lock().unwrap();
        // Drop the map entry once no other thread holds a clone.
        if Arc::strong_count(lock) <= 2 {
            map.remove(key);
        }
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        let key = cache_key(config, messages);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }

        let lock = self.key_lock(&key);
        let result = {
            let _guard = lock.lock().unwrap();
            // A concurrent identical request may have filled the cache
            // while this thread waited for the key lock.
            if let Some(hit) = self.cache.get(&key) {
                Ok(hit)
            } else {
                match self.inner.complete(config, messages) {
                    Ok(exchange) => {
                        self.cache.put(&key, &exchange)?;
                        Ok(exchange)
                    }
                    Err(e) => Err(e),
                }
            }
        };
        self.release_key(&key, &lock);
        result
    }
}
