//! Automated scoring of free-recall transcripts against source stories.
//!
//! The pipeline splits a story text and a recall transcript into equally
//! sized, overlapping word windows, maps every window to a sentence
//! embedding, correlates story windows against recall windows (Spearman,
//! Fisher-Z transformed), and extracts recall metrics from the resulting
//! similarity matrix: maximum recall, original/reversed temporal order,
//! recall distinctiveness, temporal-order divergence, and primacy/recency
//! scores. Chance levels come from pairing a story with the same
//! participant's recalls of *other* stories.
//!
//! Two scoring backends share that matrix shape:
//! - [`embed`]: correlations between segment embeddings from any remote
//!   embedding server (or a deterministic offline stub),
//! - [`rater`]: 0-100 similarity ratings obtained from a chat-style
//!   language model, averaged over replicates and scaled to `[0, 1]`.
//!
//! [`isc`] compares two participants' recalls of the same story to measure
//! intersubject agreement, and [`pipeline`] orchestrates batch runs over a
//! declarative study manifest, emitting a versioned JSON report, matrix
//! dumps, and plot-ready data.
//!
//! The `parallel` feature (on by default) runs the data-parallel inner
//! loops on a rayon thread pool; without it everything executes
//! sequentially with identical results.

pub mod embed;
pub mod isc;
pub mod manifest;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod rater;
pub mod report;
pub mod segment;
pub mod synthetic;
pub mod types;

mod exec;

pub use matrix::{build_matrix, fisher_z, spearman, MatrixMode, SimilarityMatrix};
pub use metrics::RecallMetrics;
pub use segment::{segment, tokenize, SegmentedText, TokenizedText};
pub use types::{Condition, Group};
