//! On-disk embedding cache, one JSON file per key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingVector};

/// Cache key: hex SHA-256 over `(model_id, dim, seed, text)`.
pub(crate) fn cache_key(model_id: &str, dim: usize, seed: u64, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    dim: usize,
    values: Vec<f64>,
}

pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, EmbedError> {
        fs::create_dir_all(dir).map_err(|source| EmbedError::Cache {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A corrupt or unreadable entry counts as a miss and is recomputed.
    pub fn load(&self, key: &str) -> Option<EmbeddingVector> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        if entry.values.len() != entry.dim {
            log::warn!("cache entry {key} has inconsistent dim; ignoring");
            return None;
        }
        EmbeddingVector::new(entry.values).ok()
    }

    /// Write-temp-then-rename so concurrent readers never see a torn file.
    pub fn store(&self, key: &str, vector: &EmbeddingVector) -> Result<(), EmbedError> {
        let entry = CacheEntry {
            dim: vector.dim(),
            values: vector.values().to_vec(),
        };
        let final_path = self.path_for(key);
        let tmp_path = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        let bytes = serde_json::to_vec(&entry).expect("cache entry serializes");
        fs::write(&tmp_path, bytes).map_err(|source| EmbedError::Cache {
            path: tmp_path.clone(),
            source,
        })?;
        fs::rename(&tmp_path, &final_path).map_err(|source| EmbedError::Cache {
            path: final_path,
            source,
        })?;
        Ok(())
    }
}
