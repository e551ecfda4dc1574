//! Prompt-based similarity rating backend.
//!
//! Instead of correlating embeddings, each (story segment, recall segment)
//! pair is rated 0-100 by a chat-style language model with a fixed
//! zero-shot prompt at temperature 0. Every cell is rated `replicate_count`
//! times (default 3) and the mean is divided by 100, yielding matrices in
//! proportion units with a chance floor near zero. `diagonal_only` rates
//! just the aligned cells, cutting requests n-fold for an n x n matrix.
//!
//! Also hosts the punctuation-repair preprocessing prompt with a guard that
//! verifies the provider changed punctuation but not words.

mod chat;

pub use chat::{
    ChatMessage, ChatProvider, ChatReply, ChatRequest, HttpChatProvider, LexicalStubChat,
    ScriptedChatProvider, CHAT_TOKEN_ENV,
};

use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{MatrixError, MatrixMode, SimilarityMatrix};

#[derive(Debug, Error)]
pub enum RaterError {
    #[error("{side} segment {index} is empty")]
    EmptySegment { side: &'static str, index: usize },
    #[error("reply not a rating in 0..=100: {reply:?}")]
    UnparseableReply { reply: String },
    #[error("cell ({row},{col}) unparseable after {attempts} attempts; last reply {last:?}")]
    ParseRetriesExhausted {
        row: usize,
        col: usize,
        attempts: u32,
        last: String,
    },
    #[error("chat provider unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("chat provider error: {0}")]
    Provider(String),
    #[error("invalid rater config: {0}")]
    BadConfig(String),
    #[error("repaired transcript changed the word sequence")]
    WordSequenceChanged,
    #[error("request log I/O: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

const RATING_PROMPT_HEAD: &str = "Act as an expert rater of speech contents. On a scale from 0-100, rate the degree to which a text segment from a story is semantically captured by the text segment from a human who recalled the story. 0 refers to \"not very\" and 100 refers to \"very\". If the recall segment mostly does not capture the story segment, give a 0. If the recall segment mostly captures the story segment, give a 100. This is the text segment from the story: '";
const RATING_PROMPT_MID: &str = "'. This is the text segment from the human recall: '";
const RATING_PROMPT_TAIL: &str =
    "'. Please provide only the rating score and nothing else. Use the full range of the scale.";

const PUNCTUATION_PROMPT: &str = "The following text has no or minimal punctuation. Please repair missing punctuation where it seems appropriate. Use only periods, commas, and question marks. Avoid all other punctuation. Be moderate and do not overdo it. Do not add, replace, or remove any words from the text. Do not insert line breaks. Add punctuation, but otherwise reproduce the text exactly. This is the text for which punctuation needs to be repaired: ";

/// Rating prompt with the two segments substituted into the quoted slots.
/// Segments are embedded verbatim, apostrophes included.
pub fn build_prompt(story_seg: &str, recall_seg: &str) -> String {
    debug_assert!(!story_seg.is_empty() && !recall_seg.is_empty());
    let mut prompt = String::with_capacity(
        RATING_PROMPT_HEAD.len()
            + RATING_PROMPT_MID.len()
            + RATING_PROMPT_TAIL.len()
            + story_seg.len()
            + recall_seg.len(),
    );
    prompt.push_str(RATING_PROMPT_HEAD);
    prompt.push_str(story_seg);
    prompt.push_str(RATING_PROMPT_MID);
    prompt.push_str(recall_seg);
    prompt.push_str(RATING_PROMPT_TAIL);
    prompt
}

/// Punctuation-repair prompt followed by the transcript.
pub fn punctuation_prompt(transcript: &str) -> String {
    format!("{PUNCTUATION_PROMPT}{transcript}")
}

pub(crate) fn is_punctuation_prompt(content: &str) -> Option<&str> {
    content.strip_prefix(PUNCTUATION_PROMPT)
}

pub(crate) fn split_rating_prompt(content: &str) -> Option<(&str, &str)> {
    let rest = content.strip_prefix(RATING_PROMPT_HEAD)?;
    let rest = rest.strip_suffix(RATING_PROMPT_TAIL)?;
    rest.split_once(RATING_PROMPT_MID)
}

/// First contiguous digit run, accepted iff it parses into `0..=100`.
pub fn parse_rating(reply: &str) -> Result<u8, RaterError> {
    let digits: String = reply
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let value: u32 = digits.parse().map_err(|_| RaterError::UnparseableReply {
        reply: reply.to_owned(),
    })?;
    if value > 100 {
        return Err(RaterError::UnparseableReply {
            reply: reply.to_owned(),
        });
    }
    Ok(value as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    /// Chat-completion-style HTTP endpoint.
    Remote,
    /// Deterministic offline provider: rates by lexical overlap and
    /// returns punctuation-repair inputs unchanged.
    LexicalStub,
}

/// Rating backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterConfig {
    #[serde(default = "default_chat_kind")]
    pub kind: ChatKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_rater_model")]
    pub model_id: String,
    /// Sampling temperature sent to the provider.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_replicates")]
    pub replicate_count: usize,
    /// Re-asks (same prompt) allowed per replicate on unparseable replies.
    #[serde(default = "default_parse_retry_limit")]
    pub parse_retry_limit: u32,
    #[serde(default)]
    pub diagonal_only: bool,
    #[serde(default = "default_rater_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_rater_retry_limit")]
    pub retry_limit: u32,
}

fn default_chat_kind() -> ChatKind {
    ChatKind::LexicalStub
}

fn default_rater_model() -> String {
    "lexical-stub".to_owned()
}

fn default_replicates() -> usize {
    3
}

fn default_parse_retry_limit() -> u32 {
    2
}

fn default_rater_max_in_flight() -> usize {
    4
}

fn default_rater_retry_limit() -> u32 {
    3
}

impl Default for RaterConfig {
    fn default() -> Self {
        Self {
            kind: default_chat_kind(),
            endpoint: None,
            model_id: default_rater_model(),
            temperature: 0.0,
            replicate_count: default_replicates(),
            parse_retry_limit: default_parse_retry_limit(),
            diagonal_only: false,
            max_in_flight: default_rater_max_in_flight(),
            retry_limit: default_rater_retry_limit(),
        }
    }
}

impl RaterConfig {
    pub fn validate(&self) -> Result<(), RaterError> {
        if self.replicate_count < 1 {
            return Err(RaterError::BadConfig("replicate_count must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(RaterError::BadConfig("max_in_flight must be >= 1".into()));
        }
        if self.kind == ChatKind::Remote && self.endpoint.is_none() {
            return Err(RaterError::BadConfig(
                "remote chat provider requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn build_provider(&self) -> Result<Box<dyn ChatProvider>, RaterError> {
        self.validate()?;
        Ok(match self.kind {
            ChatKind::LexicalStub => Box::new(LexicalStubChat),
            ChatKind::Remote => Box::new(HttpChatProvider::new(
                self.endpoint.clone().expect("validated"),
                self.retry_limit,
            )?),
        })
    }
}

/// One rated cell: raw replicates plus the scaled mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingCell {
    /// 1-based story segment index (matrix row).
    pub story_idx: usize,
    /// 1-based recall segment index (matrix column).
    pub recall_idx: usize,
    pub replicates: Vec<u8>,
    /// `mean(replicates) / 100`, in `[0, 1]`.
    pub value: f64,
}

/// A rating-mode matrix together with its per-cell raw replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedMatrix {
    pub matrix: SimilarityMatrix,
    pub cells: Vec<RatingCell>,
}

/// Appends one CSV line per rating request: timestamp, cell, replicate,
/// tokens (when the provider reports them).
pub struct RequestLog {
    writer: Mutex<std::io::BufWriter<std::fs::File>>,
}

impl RequestLog {
    pub fn create(path: &Path) -> Result<Self, RaterError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "timestamp_ms,cell,replicate,tokens")?;
        Ok(Self {
            writer: Mutex::new(file),
        })
    }

    fn record(&self, cell: (usize, usize), replicate: usize, tokens: Option<u64>) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let tokens = tokens.map(|t| t.to_string()).unwrap_or_default();
        let mut w = self.writer.lock().expect("log lock");
        let _ = writeln!(w, "{ts},{}x{},{replicate},{tokens}", cell.0, cell.1);
    }

    pub fn flush(&self) -> Result<(), RaterError> {
        self.writer.lock().expect("log lock").flush()?;
        Ok(())
    }
}

fn rate_cell(
    row: usize,
    col: usize,
    prompt: &str,
    cfg: &RaterConfig,
    provider: &dyn ChatProvider,
    log: Option<&RequestLog>,
) -> Result<RatingCell, RaterError> {
    let request = ChatRequest {
        model: cfg.model_id.clone(),
        temperature: cfg.temperature,
        messages: vec![ChatMessage {
            role: "user".to_owned(),
            content: prompt.to_owned(),
        }],
    };
    let mut replicates = Vec::with_capacity(cfg.replicate_count);
    for replicate in 0..cfg.replicate_count {
        let mut attempts = 0u32;
        let rating = loop {
            attempts += 1;
            let reply = provider.complete(&request)?;
            if let Some(log) = log {
                log.record((row + 1, col + 1), replicate + 1, reply.tokens);
            }
            match parse_rating(&reply.content) {
                Ok(r) => break r,
                Err(_) if attempts <= cfg.parse_retry_limit => continue,
                Err(RaterError::UnparseableReply { reply }) => {
                    return Err(RaterError::ParseRetriesExhausted {
                        row: row + 1,
                        col: col + 1,
                        attempts,
                        last: reply,
                    });
                }
                Err(e) => return Err(e),
            }
        };
        replicates.push(rating);
    }
    let value = replicates.iter().map(|&r| r as f64).sum::<f64>()
        / replicates.len() as f64
        / 100.0;
    Ok(RatingCell {
        story_idx: row + 1,
        recall_idx: col + 1,
        replicates,
        value,
    })
}

/// Rate every (story segment, recall segment) combination, or just the
/// diagonal when `cfg.diagonal_only`. Cells are requested in waves of
/// `max_in_flight`; assembly is keyed by (row, col, replicate) so the
/// matrix layout is deterministic regardless of completion order.
pub fn rate_matrix(
    story_segs: &[String],
    recall_segs: &[String],
    cfg: &RaterConfig,
    provider: &dyn ChatProvider,
    log: Option<&RequestLog>,
) -> Result<RatedMatrix, RaterError> {
    cfg.validate()?;
    for (index, s) in story_segs.iter().enumerate() {
        if s.trim().is_empty() {
            return Err(RaterError::EmptySegment {
                side: "story",
                index,
            });
        }
    }
    for (index, s) in recall_segs.iter().enumerate() {
        if s.trim().is_empty() {
            return Err(RaterError::EmptySegment {
                side: "recall",
                index,
            });
        }
    }

    let n_rows = story_segs.len();
    let n_cols = recall_segs.len();
    let coords: Vec<(usize, usize)> = if cfg.diagonal_only {
        (0..n_rows.min(n_cols)).map(|i| (i, i)).collect()
    } else {
        (0..n_rows)
            .flat_map(|i| (0..n_cols).map(move |j| (i, j)))
            .collect()
    };

    let mut cells: Vec<RatingCell> = Vec::with_capacity(coords.len());
    for wave in coords.chunks(cfg.max_in_flight.max(1)) {
        let results: Vec<Result<RatingCell, RaterError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&(i, j)| {
                    let prompt = build_prompt(&story_segs[i], &recall_segs[j]);
                    scope.spawn(move || rate_cell(i, j, &prompt, cfg, provider, log))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rating worker panicked"))
                .collect()
        });
        for r in results {
            cells.push(r?);
        }
    }

    let mut grid: Vec<Option<f64>> = vec![None; n_rows * n_cols];
    for cell in &cells {
        grid[(cell.story_idx - 1) * n_cols + (cell.recall_idx - 1)] = Some(cell.value);
    }
    let matrix = SimilarityMatrix::sparse(MatrixMode::Rating, n_rows, n_cols, grid)?;
    Ok(RatedMatrix { matrix, cells })
}

/// Transcript text after punctuation repair.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairedTranscript {
    pub text: String,
    /// True when the punctuation-stripped, lowercased word sequence
    /// differs from the input's.
    pub word_sequence_changed: bool,
}

fn normalized_words(text: &str) -> Vec<String> {
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

/// Run the transcript through the punctuation-repair prompt.
///
/// The guard compares word sequences before and after; a mismatch is a
/// hard error when `strict`, otherwise it is logged and flagged on the
/// returned transcript.
pub fn repair_punctuation(
    transcript: &str,
    cfg: &RaterConfig,
    provider: &dyn ChatProvider,
    strict: bool,
) -> Result<RepairedTranscript, RaterError> {
    debug_assert!(!transcript.trim().is_empty());
    let request = ChatRequest {
        model: cfg.model_id.clone(),
        temperature: cfg.temperature,
        messages: vec![ChatMessage {
            role: "user".to_owned(),
            content: punctuation_prompt(transcript),
        }],
    };
    let reply = provider.complete(&request)?;
    let changed = normalized_words(transcript) != normalized_words(&reply.content);
    if changed {
        if strict {
            return Err(RaterError::WordSequenceChanged);
        }
        log::warn!("punctuation repair changed the word sequence; keeping provider output");
    }
    Ok(RepairedTranscript {
        text: reply.content,
        word_sequence_changed: changed,
    })
}
