//! Evaluation cache: an in-memory map with an optional on-disk store that
//! survives process restarts.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::environment::sha256_hex;
use crate::metrics::MetricReport;

/// Everything a cached reward depends on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    /// Hex of the space's canonical config key.
    pub config: String,
    pub qa_file_hash: String,
    pub corpus_file_hash: String,
    pub modality: String,
    /// Digest of the scoring rule: metric weights, tokenization and backend.
    pub eval_mode: String,
}

impl CacheKey {
    /// Stable file-name-safe digest of the whole key.
    pub fn digest(&self) -> String {
        sha256_hex(
            format!("{}\n{}\n{}\n{}\n{}", self.config, self.qa_file_hash, self.corpus_file_hash, self.modality, self.eval_mode)
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedValue {
    pub reward: f64,
    pub report: MetricReport,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    value: CachedValue,
}

/// Thread-safe evaluation cache. Concurrent writers of one key always carry
/// identical values, so last-writer-wins is harmless.
#[derive(Debug, Default)]
pub struct EvalCache {
    memory: RwLock<HashMap<CacheKey, CachedValue>>,
    dir: Option<PathBuf>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl EvalCache {
    pub fn in_memory() -> Self {
        EvalCache::default()
    }

    /// Cache backed by `dir`, created if missing.
    pub fn on_disk(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(EvalCache { memory: RwLock::default(), dir: Some(dir.to_path_buf()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &CacheKey) -> Option<PathBuf> {
        let d = key.digest();
        self.dir.as_ref().map(|dir| dir.join(&d[..2]).join(format!("{d}.json")))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedValue> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let path = self.path(key)?;
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(e) if e.key == *key => {
                self.memory.write().expect("cache lock").insert(key.clone(), e.value.clone());
                Some(e.value)
            }
            Ok(_) => {
                log::warn!("cache entry {} belongs to a different key; ignoring it", path.display());
                None
            }
            Err(err) => {
                log::warn!("dropping corrupt cache entry {}: {err}", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Stores `value`; disk write failures are logged and otherwise ignored.
    pub fn put(&self, key: &CacheKey, value: &CachedValue) {
        self.memory.write().expect("cache lock").insert(key.clone(), value.clone());
        if let Some(path) = self.path(key) {
            if let Err(err) = write_atomic(&path, &Entry { key: key.clone(), value: value.clone() }) {
                log::warn!("could not persist cache entry {}: {err}", path.display());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn write_atomic(path: &Path, entry: &Entry) -> std::io::Result<()> {
    let parent = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(parent)?;
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = parent.join(format!(".tmp-{}-{n}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(entry).map_err(std::io::Error::other)?)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
