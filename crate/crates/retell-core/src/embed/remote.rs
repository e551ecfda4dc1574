//! HTTP embedding backend.
//!
//! Wire contract: `POST endpoint` with body `{"model": "...", "texts":
//! ["...", ...]}` answered by `{"vectors": [[...], ...]}`, vectors
//! order-aligned to the request texts. Any embedding server can sit behind
//! this, including a thin wrapper around a local sentence-embedding model.
//! A bearer token is read from the `RETELL_EMBED_API_KEY` environment
//! variable when present.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingBackend, EmbeddingVector, ProviderConfig};

/// Environment variable holding the bearer token for the embedding server.
pub const EMBED_TOKEN_ENV: &str = "RETELL_EMBED_API_KEY";

/// Texts per HTTP request; requests run in waves of `max_in_flight`.
const REQUEST_BATCH: usize = 32;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteBackend {
    endpoint: String,
    model_id: String,
    max_in_flight: usize,
    retry_limit: u32,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, EmbedError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::BadConfig("remote provider requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| EmbedError::BadConfig(format!("http client: {e}")))?;
        Ok(Self {
            endpoint,
            model_id: cfg.model_id.clone(),
            max_in_flight: cfg.max_in_flight.max(1),
            retry_limit: cfg.retry_limit,
            token: std::env::var(EMBED_TOKEN_ENV).ok(),
            client,
        })
    }

    fn post_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.try_post(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(Retry::Fatal(e)) => return Err(e),
                Err(Retry::Transient(message)) => {
                    if attempts > self.retry_limit {
                        return Err(EmbedError::ProviderUnavailable { attempts, message });
                    }
                    let backoff = Duration::from_millis(50u64 << attempts.min(6));
                    std::thread::sleep(backoff);
                }
            }
        }
    }

    fn try_post(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, Retry> {
        let body = EmbedRequest {
            model: &self.model_id,
            texts,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Retry::Transient(format!("request failed: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Retry::Transient(format!("server error {status}")));
        }
        if !status.is_success() {
            return Err(Retry::Fatal(EmbedError::BadResponse(format!(
                "status {status}"
            ))));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| Retry::Fatal(EmbedError::BadResponse(format!("bad json: {e}"))))?;
        if parsed.vectors.len() != texts.len() {
            return Err(Retry::Fatal(EmbedError::BadResponse(format!(
                "got {} vectors for {} texts",
                parsed.vectors.len(),
                texts.len()
            ))));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| EmbeddingVector::new(v).map_err(Retry::Fatal))
            .collect()
    }
}

enum Retry {
    Transient(String),
    Fatal(EmbedError),
}

impl EmbeddingBackend for RemoteBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let chunks: Vec<&[String]> = texts.chunks(REQUEST_BATCH).collect();
        let mut out: Vec<Vec<EmbeddingVector>> = Vec::with_capacity(chunks.len());
        for wave in chunks.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, EmbedError>> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|chunk| scope.spawn(|| self.post_chunk(chunk)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("embed worker panicked"))
                        .collect()
                });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out.into_iter().flatten().collect())
    }
}
