//! Content-addressed verdict cache keyed by prompt hash, model and
//! temperature.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::taxonomy::{FlagId, FlagSet};

/// The contribution-independent part of a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedVerdict {
    pub labels: FlagSet,
    pub rationale: std::collections::BTreeMap<FlagId, String>,
    pub raw_output: String,
    pub repaired: bool,
    pub needs_review: bool,
    pub retries: u32,
    pub notes: Vec<String>,
    pub latency_ms: u64,
}

pub fn cache_key(content_hash: &str, model: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(content_hash.as_bytes());
    h.update([0u8]);
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(format!("{temperature:?}").as_bytes());
    hex::encode(h.finalize())
}

pub trait VerdictCache: Send + Sync {
    fn get(&self, key: &str) -> Option<CachedVerdict>;
    fn put(&self, key: &str, verdict: &CachedVerdict);
}

#[derive(Default)]
pub struct MemoryCache {
    entries: RwLock<HashMap<String, CachedVerdict>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl VerdictCache for MemoryCache {
    fn get(&self, key: &str) -> Option<CachedVerdict> {
        self.entries.read().unwrap().get(key).cloned()
    }

    fn put(&self, key: &str, verdict: &CachedVerdict) {
        self.entries.write().unwrap().insert(key.to_string(), verdict.clone());
    }
}

/// One JSON file per key under `<dir>/<first two hex chars>/`.
pub struct FileCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FileCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileCache {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{key}.json"))
    }
}

impl VerdictCache for FileCache {
    fn get(&self, key: &str) -> Option<CachedVerdict> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!(key, error = %e, "ignoring corrupt cache entry");
                None
            }
        }
    }

    fn put(&self, key: &str, verdict: &CachedVerdict) {
        let _guard = self.write_lock.lock().unwrap();
        let path = self.path(key);
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(path.parent().expect("sharded path"))?;
            let tmp = path.with_extension("tmp");
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(verdict)?)?;
            fs::rename(tmp, &path)
        };
        if let Err(e) = write() {
            warn!(path = %path.display(), error = %e, "cache write failed");
        }
    }
}
