//! Segment embeddings via a configurable backend.
//!
//! The provider maps each segment string to one fixed-dimension vector
//! (default 768). Backends are pluggable behind a minimal "texts in,
//! vectors out" contract: a remote HTTP server for real models, and a
//! deterministic bag-of-words stub for offline runs and tests. Results are
//! cached on disk keyed by `(model_id, dim, seed, text)` so repeated sweep
//! runs and chance-control pairings never re-bill a remote call.

mod cache;
mod remote;
mod stub;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::DiskCache;
pub use remote::{RemoteBackend, EMBED_TOKEN_ENV};
pub use stub::{stub_embed, StubBackend};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("segment text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("backend returned a vector of length {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding provider unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("backend response malformed: {0}")]
    BadResponse(String),
    #[error("invalid provider config: {0}")]
    BadConfig(String),
    #[error("embedding vector invalid: {0}")]
    BadVector(String),
    #[error("cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A fixed-dimension semantic vector for one text segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Checks the vector is non-empty, finite, and not all-zero.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::BadVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::BadVector("non-finite entry".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(EmbedError::BadVector("all-zero vector".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = String;

    fn try_from(values: Vec<f64>) -> Result<Self, String> {
        EmbeddingVector::new(values).map_err(|e| e.to_string())
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    Stub,
}

/// Embedding backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// POST endpoint; required for the remote kind.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Seed for the stub backend; ignored by remote backends.
    #[serde(default)]
    pub seed: u64,
}

fn default_model_id() -> String {
    "stub".to_owned()
}

fn default_dim() -> usize {
    768
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retry_limit() -> u32 {
    3
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: None,
            model_id: default_model_id(),
            dim: default_dim(),
            max_in_flight: default_max_in_flight(),
            retry_limit: default_retry_limit(),
            cache_dir: None,
            seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::BadConfig(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.max_in_flight < 1 {
            return Err(EmbedError::BadConfig("max_in_flight must be >= 1".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::BadConfig(
                "remote provider requires an endpoint".into(),
            ));
        }
        Ok(())
    }
}

/// Raw "texts in, vectors out" computation. Implementations only see cache
/// misses; ordering and caching are handled by [`EmbeddingProvider`].
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Caching, order-preserving front of an [`EmbeddingBackend`].
pub struct EmbeddingProvider {
    cfg: ProviderConfig,
    backend: Box<dyn EmbeddingBackend>,
    cache: Option<DiskCache>,
}

impl EmbeddingProvider {
    pub fn from_config(cfg: ProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let backend: Box<dyn EmbeddingBackend> = match cfg.kind {
            ProviderKind::Stub => Box::new(StubBackend::new(cfg.dim, cfg.seed)),
            ProviderKind::Remote => Box::new(RemoteBackend::new(&cfg)?),
        };
        Self::with_backend(cfg, backend)
    }

    /// Wire up an explicit backend (test injection point).
    pub fn with_backend(
        cfg: ProviderConfig,
        backend: Box<dyn EmbeddingBackend>,
    ) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let cache = match &cfg.cache_dir {
            Some(dir) => Some(DiskCache::open(dir)?),
            None => None,
        };
        Ok(Self { cfg, backend, cache })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    /// One vector per input text, order-aligned with the inputs.
    ///
    /// Duplicate texts are computed once; cache hits never reach the
    /// backend. Every returned vector is validated against `cfg.dim`.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        for (index, t) in texts.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(EmbedError::EmptyText { index });
            }
        }

        let keys: Vec<String> = texts
            .iter()
            .map(|t| cache::cache_key(&self.cfg.model_id, self.cfg.dim, self.cfg.seed, t))
            .collect();

        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        if let Some(cache) = &self.cache {
            for (i, key) in keys.iter().enumerate() {
                if let Some(v) = cache.load(key) {
                    if v.dim() != self.cfg.dim {
                        return Err(EmbedError::DimMismatch {
                            expected: self.cfg.dim,
                            got: v.dim(),
                        });
                    }
                    out[i] = Some(v);
                }
            }
        }

        // Deduplicate misses by text before hitting the backend.
        let mut miss_texts: Vec<String> = Vec::new();
        let mut miss_of: Vec<Option<usize>> = vec![None; texts.len()];
        {
            let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
            for (i, t) in texts.iter().enumerate() {
                if out[i].is_some() {
                    continue;
                }
                let slot = *seen.entry(t.as_str()).or_insert_with(|| {
                    miss_texts.push(t.clone());
                    miss_texts.len() - 1
                });
                miss_of[i] = Some(slot);
            }
        }

        if !miss_texts.is_empty() {
            let computed = self.backend.embed(&miss_texts)?;
            if computed.len() != miss_texts.len() {
                return Err(EmbedError::BadResponse(format!(
                    "backend returned {} vectors for {} texts",
                    computed.len(),
                    miss_texts.len()
                )));
            }
            for v in &computed {
                if v.dim() != self.cfg.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.cfg.dim,
                        got: v.dim(),
                    });
                }
            }
            if let Some(cache) = &self.cache {
                for (t, v) in miss_texts.iter().zip(&computed) {
                    let key = cache::cache_key(&self.cfg.model_id, self.cfg.dim, self.cfg.seed, t);
                    cache.store(&key, v)?;
                }
            }
            for (i, slot) in miss_of.iter().enumerate() {
                if let Some(s) = slot {
                    out[i] = Some(computed[*s].clone());
                }
            }
        }

        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}
