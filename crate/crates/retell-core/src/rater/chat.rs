//! Chat-style providers behind the rating and punctuation prompts.
//!
//! Wire contract: `POST endpoint` with `{"model", "temperature",
//! "messages": [{"role", "content"}]}` answered by `{"content": "...",
//! "tokens": n?}`. A bearer token is read from `RETELL_CHAT_API_KEY` when
//! present. Scripted and lexical-overlap providers cover tests and fully
//! offline runs.

use std::collections::HashMap;
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RaterError;

/// Environment variable holding the bearer token for the chat endpoint.
pub const CHAT_TOKEN_ENV: &str = "RETELL_CHAT_API_KEY";

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatReply {
    pub content: String,
    #[serde(default)]
    pub tokens: Option<u64>,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, RaterError>;
}

/// HTTP chat provider with transient-error retries.
pub struct HttpChatProvider {
    endpoint: String,
    retry_limit: u32,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(endpoint: String, retry_limit: u32) -> Result<Self, RaterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| RaterError::BadConfig(format!("http client: {e}")))?;
        Ok(Self {
            endpoint,
            retry_limit,
            token: std::env::var(CHAT_TOKEN_ENV).ok(),
            client,
        })
    }

    fn try_post(&self, request: &ChatRequest) -> Result<ChatReply, Transient> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Transient::Retry(format!("request failed: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Transient::Retry(format!("server error {status}")));
        }
        if !status.is_success() {
            return Err(Transient::Fatal(RaterError::Provider(format!(
                "status {status}"
            ))));
        }
        resp.json()
            .map_err(|e| Transient::Fatal(RaterError::Provider(format!("bad json: {e}"))))
    }
}

enum Transient {
    Retry(String),
    Fatal(RaterError),
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, RaterError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.try_post(request) {
                Ok(reply) => return Ok(reply),
                Err(Transient::Fatal(e)) => return Err(e),
                Err(Transient::Retry(message)) => {
                    if attempts > self.retry_limit {
                        return Err(RaterError::ProviderUnavailable { attempts, message });
                    }
                    std::thread::sleep(Duration::from_millis(50u64 << attempts.min(6)));
                }
            }
        }
    }
}

/// Test provider scripted as a function of `(prompt, nth call for that
/// prompt)`. Counting per prompt keeps replicate sequences deterministic
/// even when distinct cells are requested concurrently.
pub struct ScriptedChatProvider {
    script: Box<dyn Fn(&str, usize) -> String + Send + Sync>,
    per_prompt: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
}

impl ScriptedChatProvider {
    pub fn new(script: impl Fn(&str, usize) -> String + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            per_prompt: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Total requests received.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, RaterError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let nth = {
            let mut seen = self.per_prompt.lock().expect("script lock");
            let counter = seen.entry(prompt.to_owned()).or_insert(0);
            let nth = *counter;
            *counter += 1;
            nth
        };
        Ok(ChatReply {
            content: (self.script)(prompt, nth),
            tokens: None,
        })
    }
}

/// Deterministic offline provider.
///
/// Rating prompts are answered with the rounded Jaccard word overlap of
/// the two quoted segments (0-100); punctuation-repair prompts echo the
/// transcript unchanged. Useful as a zero-cost stand-in that still reacts
/// to lexical degradation the way a real rater reacts to semantic
/// degradation.
pub struct LexicalStubChat;

fn word_set(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl ChatProvider for LexicalStubChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, RaterError> {
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        if let Some(transcript) = super::is_punctuation_prompt(prompt) {
            return Ok(ChatReply {
                content: transcript.to_owned(),
                tokens: None,
            });
        }
        let (story_seg, recall_seg) = super::split_rating_prompt(prompt).ok_or_else(|| {
            RaterError::Provider("lexical stub received an unknown prompt shape".into())
        })?;
        let a = word_set(story_seg);
        let b = word_set(recall_seg);
        let union = a.union(&b).count();
        let inter = a.intersection(&b).count();
        let score = if union == 0 {
            0.0
        } else {
            100.0 * inter as f64 / union as f64
        };
        Ok(ChatReply {
            content: format!("{}", score.round() as u32),
            tokens: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rater::build_prompt;

    fn request(content: &str) -> ChatRequest {
        ChatRequest {
            model: "m".to_owned(),
            temperature: 0.0,
            messages: vec![ChatMessage {
                role: "user".to_owned(),
                content: content.to_owned(),
            }],
        }
    }

    #[test]
    fn scripted_counts_per_prompt() {
        let p = ScriptedChatProvider::new(|_, k| format!("{}", k * 10));
        let r1 = request("one");
        let r2 = request("two");
        assert_eq!(p.complete(&r1).unwrap().content, "0");
        assert_eq!(p.complete(&r1).unwrap().content, "10");
        assert_eq!(p.complete(&r2).unwrap().content, "0");
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn lexical_stub_rates_overlap() {
        let full = LexicalStubChat
            .complete(&request(&build_prompt("a b c", "a b c")))
            .unwrap();
        assert_eq!(full.content, "100");
        let none = LexicalStubChat
            .complete(&request(&build_prompt("a b c", "x y z")))
            .unwrap();
        assert_eq!(none.content, "0");
        let half = LexicalStubChat
            .complete(&request(&build_prompt("a b", "a c")))
            .unwrap();
        assert_eq!(half.content, "33"); // |{a}| / |{a,b,c}|
    }

    #[test]
    fn lexical_stub_echoes_punctuation_prompt() {
        let prompt = crate::rater::punctuation_prompt("raw words without stops");
        let reply = LexicalStubChat.complete(&request(&prompt)).unwrap();
        assert_eq!(reply.content, "raw words without stops");
    }
}
