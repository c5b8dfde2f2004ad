//! Content-addressed response cache: one JSON file per request digest, and
//! the replay provider that serves completions from a recorded store.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CacheKey, CallContext, CompletionRequest, GatewayError, Provider, ProviderKind};

/// On-disk cache record. `request` is stored so entries are auditable and so
/// a replay store documents exactly what was asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CompletionRequest,
    pub response_text: String,
    /// Unix seconds at record time.
    pub created_at: u64,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Directory of cache entries keyed by request digest.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    /// Open a cache directory, creating it if needed.
    pub fn create(dir: &Path) -> Result<ResponseCache, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|source| GatewayError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Open an existing directory without creating it (replay stores are
    /// read-only inputs; a typo'd path should fail loudly on first read,
    /// not silently become an empty cache).
    pub fn open(dir: &Path) -> ResponseCache {
        ResponseCache {
            dir: dir.to_path_buf(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(GatewayError::CacheIo {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let entry = serde_json::from_str(&text).map_err(|source| GatewayError::CacheCorrupt {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Some(entry))
    }

    /// Record a response under `key`, stamped with the current time.
    pub fn put(
        &self,
        key: &CacheKey,
        request: &CompletionRequest,
        response_text: &str,
    ) -> Result<(), GatewayError> {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.put_entry(
            key,
            &CacheEntry {
                request: request.clone(),
                response_text: response_text.to_string(),
                created_at,
            },
        )
    }

    /// Write an entry atomically (temp file in the same directory, then
    /// rename) so concurrent writers and readers never see a torn file.
    pub fn put_entry(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.entry_path(key);
        let io_err = |source| GatewayError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        let mut body = serde_json::to_string_pretty(entry).expect("entry serializes");
        body.push('\n');
        let temp = self.dir.join(format!(
            ".tmp-{}-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed),
            key.digest()
        ));
        std::fs::write(&temp, body).map_err(io_err)?;
        std::fs::rename(&temp, &path).map_err(io_err)
    }
}

/// Serves completions from a previously recorded cache directory and fails
/// with a replay-miss naming the digest when a request was never recorded.
pub struct ReplayProvider {
    store: ResponseCache,
}

impl ReplayProvider {
    pub fn new(store: ResponseCache) -> ReplayProvider {
        ReplayProvider { store }
    }
}

impl Provider for ReplayProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn complete(
        &self,
        request: &CompletionRequest,
        _context: &CallContext,
    ) -> Result<String, GatewayError> {
        let key = request.cache_key();
        match self.store.get(&key)? {
            Some(entry) => Ok(entry.response_text),
            None => Err(GatewayError::ReplayMiss {
                digest: key.digest().to_string(),
            }),
        }
    }

    // The store itself is the source of truth; layering the gateway cache on
    // top would only duplicate reads.
    fn wants_cache(&self) -> bool {
        false
    }
}
