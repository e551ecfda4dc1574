//! Recall metrics extracted from a square story x recall matrix.
//!
//! Per row (story segment): the maximum entry and its column index, the
//! within-row peak z-score (distinctiveness). Per diagonal: original-order
//! and reversed-order scores, plus primacy / middle / recency triplets.
//! The argmax column indices against the identity order give the
//! temporal-order divergence (RMSE). Chance levels repeat the whole bundle
//! for matrices pairing a story with the same participant's recalls of
//! other stories.
//!
//! All operations work identically on embedding-mode (Fisher-Z) and
//! rating-mode (proportion) matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::matrix::{build_matrix, MatrixError, SimilarityMatrix};
use crate::types::Condition;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("primacy/recency need at least 6 segments, got {n}")]
    BadN { n: usize },
    #[error("no control recalls supplied")]
    NoControls,
    #[error("story {story_id} has no condition label")]
    MissingLabel { story_id: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Full metric set for one story x recall matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallMetrics {
    /// Segment count (matrix side length).
    pub n: usize,
    /// Mean over rows of the row maximum.
    pub max_recall: f64,
    /// 1-based argmax column per row, ties to the lowest column.
    pub max_indices: Vec<usize>,
    /// Mean of the main diagonal.
    pub original_order: f64,
    /// Mean of the anti-diagonal.
    pub reversed_order: f64,
    /// Mean over rows of the peak within-row z-score.
    pub distinctiveness: f64,
    /// RMSE between `max_indices` and the identity order `1..=n`.
    pub temporal_divergence: f64,
    /// Mean of the first two diagonal entries.
    pub primacy: f64,
    /// Mean of the two middle diagonal entries.
    pub middle: f64,
    /// Mean of the last two diagonal entries.
    pub recency: f64,
}

impl RecallMetrics {
    /// Extract every metric from a full square matrix (n >= 6).
    pub fn from_matrix(m: &SimilarityMatrix) -> Result<Self, MetricsError> {
        let (max_recall_score, max_indices) = max_recall(m)?;
        let (original_order, reversed_order) = order_scores(m)?;
        let distinct = distinctiveness(m)?;
        let divergence = temporal_divergence(&max_indices);
        let (primacy, middle, recency) = primacy_recency(m)?;
        Ok(Self {
            n: m.n_rows(),
            max_recall: max_recall_score,
            max_indices,
            original_order,
            reversed_order,
            distinctiveness: distinct,
            temporal_divergence: divergence,
            primacy,
            middle,
            recency,
        })
    }

    pub fn bundle(&self) -> MetricsBundle {
        MetricsBundle {
            max_recall: self.max_recall,
            original_order: self.original_order,
            reversed_order: self.reversed_order,
            distinctiveness: self.distinctiveness,
            temporal_divergence: self.temporal_divergence,
            primacy: self.primacy,
            middle: self.middle,
            recency: self.recency,
        }
    }
}

/// Scalar metric bundle; the unit of averaging for chance controls,
/// condition averages, and group descriptives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub max_recall: f64,
    pub original_order: f64,
    pub reversed_order: f64,
    pub distinctiveness: f64,
    pub temporal_divergence: f64,
    pub primacy: f64,
    pub middle: f64,
    pub recency: f64,
}

impl MetricsBundle {
    pub const FIELDS: [&'static str; 8] = [
        "max_recall",
        "original_order",
        "reversed_order",
        "distinctiveness",
        "temporal_divergence",
        "primacy",
        "middle",
        "recency",
    ];

    pub fn field(&self, name: &str) -> f64 {
        match name {
            "max_recall" => self.max_recall,
            "original_order" => self.original_order,
            "reversed_order" => self.reversed_order,
            "distinctiveness" => self.distinctiveness,
            "temporal_divergence" => self.temporal_divergence,
            "primacy" => self.primacy,
            "middle" => self.middle,
            "recency" => self.recency,
            other => panic!("unknown metric field {other}"),
        }
    }
}

/// Fieldwise mean; `None` for an empty slice.
pub fn mean_bundles(items: &[MetricsBundle]) -> Option<MetricsBundle> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let mut sum = MetricsBundle {
        max_recall: 0.0,
        original_order: 0.0,
        reversed_order: 0.0,
        distinctiveness: 0.0,
        temporal_divergence: 0.0,
        primacy: 0.0,
        middle: 0.0,
        recency: 0.0,
    };
    for b in items {
        sum.max_recall += b.max_recall;
        sum.original_order += b.original_order;
        sum.reversed_order += b.reversed_order;
        sum.distinctiveness += b.distinctiveness;
        sum.temporal_divergence += b.temporal_divergence;
        sum.primacy += b.primacy;
        sum.middle += b.middle;
        sum.recency += b.recency;
    }
    Some(MetricsBundle {
        max_recall: sum.max_recall / n,
        original_order: sum.original_order / n,
        reversed_order: sum.reversed_order / n,
        distinctiveness: sum.distinctiveness / n,
        temporal_divergence: sum.temporal_divergence / n,
        primacy: sum.primacy / n,
        middle: sum.middle / n,
        recency: sum.recency / n,
    })
}

fn require_square_full(m: &SimilarityMatrix) -> Result<usize, MetricsError> {
    if !m.is_square() {
        return Err(MatrixError::NotSquare {
            rows: m.n_rows(),
            cols: m.n_cols(),
        }
        .into());
    }
    Ok(m.n_rows())
}

/// Mean row maximum and the 1-based argmax column per row.
pub fn max_recall(m: &SimilarityMatrix) -> Result<(f64, Vec<usize>), MetricsError> {
    let n = require_square_full(m)?;
    let mut indices = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let row = m.dense_row(i)?;
        let (mut best_j, mut best) = (0usize, row[0]);
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_j = j;
            }
        }
        total += best;
        indices.push(best_j + 1);
    }
    Ok((total / n as f64, indices))
}

/// `(original_order, reversed_order)`: means of the main and anti-diagonal.
pub fn order_scores(m: &SimilarityMatrix) -> Result<(f64, f64), MetricsError> {
    let diag = m.diagonal()?;
    let anti = m.anti_diagonal()?;
    Ok((mean(&diag), mean(&anti)))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Peak z-score of one row, sample SD (divisor n-1). A constant row is
/// defined as 0 so one degenerate row cannot poison the matrix mean.
pub fn row_distinctiveness(row: &[f64]) -> f64 {
    // Equality check rather than var == 0: the mean of a constant row can
    // carry rounding noise that leaves a spurious tiny variance.
    if row.iter().all(|v| *v == row[0]) {
        return 0.0;
    }
    let n = row.len() as f64;
    let m = mean(row);
    let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    row.iter()
        .map(|v| (v - m) / sd)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mean over rows of [`row_distinctiveness`].
pub fn distinctiveness(m: &SimilarityMatrix) -> Result<f64, MetricsError> {
    let n = require_square_full(m)?;
    let mut total = 0.0;
    for i in 0..n {
        total += row_distinctiveness(&m.dense_row(i)?);
    }
    Ok(total / n as f64)
}

/// RMSE between the recalled order (1-based argmax indices) and the
/// identity order `1..=n`.
pub fn temporal_divergence(max_indices: &[usize]) -> f64 {
    let n = max_indices.len();
    debug_assert!(max_indices.iter().all(|&ix| ix >= 1 && ix <= n));
    let sse: f64 = max_indices
        .iter()
        .enumerate()
        .map(|(i, &ix)| {
            let d = ix as f64 - (i + 1) as f64;
            d * d
        })
        .sum();
    (sse / n as f64).sqrt()
}

/// `(primacy, middle, recency)` from the main diagonal; requires n >= 6 so
/// the three two-entry windows cannot overlap.
pub fn primacy_recency(m: &SimilarityMatrix) -> Result<(f64, f64, f64), MetricsError> {
    let diag = m.diagonal()?;
    primacy_recency_from_diagonal(&diag)
}

/// Same as [`primacy_recency`] for an already extracted diagonal; used by
/// diagonal-only rating runs. Middle entries are `floor(n/2)` and the next
/// (1-based).
pub fn primacy_recency_from_diagonal(diag: &[f64]) -> Result<(f64, f64, f64), MetricsError> {
    let n = diag.len();
    if n < 6 {
        return Err(MetricsError::BadN { n });
    }
    let primacy = (diag[0] + diag[1]) / 2.0;
    let recency = (diag[n - 2] + diag[n - 1]) / 2.0;
    let mid = n / 2; // 1-based floor(n/2); 0-based index mid-1
    let middle = (diag[mid - 1] + diag[mid]) / 2.0;
    Ok((primacy, middle, recency))
}

/// Chance bundle: one matrix per (story, other recall) pairing, metrics per
/// matrix, fieldwise mean over pairings.
pub fn chance_metrics(
    story_rows: &[EmbeddingVector],
    other_recalls: &[Vec<EmbeddingVector>],
) -> Result<MetricsBundle, MetricsError> {
    if other_recalls.is_empty() {
        return Err(MetricsError::NoControls);
    }
    let bundles = crate::exec::try_map(other_recalls, |recall| {
        let m = build_matrix(story_rows, recall)?;
        Ok::<MetricsBundle, MetricsError>(RecallMetrics::from_matrix(&m)?.bundle())
    })?;
    Ok(mean_bundles(&bundles).expect("non-empty controls"))
}

/// Per-condition fieldwise means over a participant's per-story bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAverages {
    pub clear: Option<MetricsBundle>,
    pub babble: Option<MetricsBundle>,
}

/// Average `per_story` bundles within each condition label. Every story
/// must be labelled in `condition_of`.
pub fn condition_average(
    per_story: &[(String, MetricsBundle)],
    condition_of: &BTreeMap<String, Condition>,
) -> Result<ConditionAverages, MetricsError> {
    let mut clear = Vec::new();
    let mut babble = Vec::new();
    for (story_id, bundle) in per_story {
        match condition_of.get(story_id) {
            Some(Condition::Clear) => clear.push(*bundle),
            Some(Condition::Babble) => babble.push(*bundle),
            None => {
                return Err(MetricsError::MissingLabel {
                    story_id: story_id.clone(),
                })
            }
        }
    }
    Ok(ConditionAverages {
        clear: mean_bundles(&clear),
        babble: mean_bundles(&babble),
    })
}
