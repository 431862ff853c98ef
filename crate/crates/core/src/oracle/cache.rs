use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OracleError;
use crate::toylm::DecodeParams;

/// SHA-256 (hex) of the compact, key-sorted JSON of the request.
pub fn cache_key(backend: &str, model: &str, prompt: &str, dp: &DecodeParams) -> String {
    // serde_json maps are ordered by key, so this is canonical.
    let v = serde_json::json!({
        "backend": backend,
        "model": model,
        "prompt": prompt,
        "decode": {"max_new_tokens": dp.max_new_tokens, "stop": dp.stop},
    });
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// SHA-256 of the prompt text alone.
    pub prompt_hash: String,
    pub text: String,
    pub backend: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// One JSON file per key at `{dir}/{key[..2]}/{key}.json`.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn cache_err(e: impl std::fmt::Display) -> OracleError {
    OracleError::Cache(e.to_string())
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, OracleError> {
        match std::fs::read(self.path_for(key)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(cache_err)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(cache_err(e)),
        }
    }

    /// Writes through a temporary file and a rename, so readers never see a
    /// partial entry. Concurrent writers of one key store the same text.
    pub fn put(&self, key: &str, prompt: &str, text: &str, backend: &str) -> Result<(), OracleError> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir).map_err(cache_err)?;
        let entry = CacheEntry {
            prompt_hash: hex::encode(Sha256::digest(prompt.as_bytes())),
            text: text.to_string(),
            backend: backend.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        std::fs::write(&tmp, serde_json::to_vec(&entry).map_err(cache_err)?).map_err(cache_err)?;
        std::fs::rename(&tmp, &path).map_err(cache_err)?;
        Ok(())
    }
}
