//! Intersubject recall agreement.
//!
//! Two participants who heard the same story under the same condition are
//! compared through a recall x recall matrix built exactly like the
//! story x recall matrices. Per pair we keep the original-order score,
//! reversed-order score, and temporal-order divergence; per participant the
//! pair scores are averaged separately over peers of the participant's own
//! group and the other group. Recalls stay in their original languages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::matrix::{build_matrix, SimilarityMatrix};
use crate::metrics::{self, MetricsError};
use crate::types::{Condition, Group};

#[derive(Debug, Error, PartialEq)]
pub enum IscError {
    #[error("pair mixes stories or conditions: ({a_story},{a_cond}) vs ({b_story},{b_cond})")]
    IncomparablePair {
        a_story: String,
        a_cond: Condition,
        b_story: String,
        b_cond: Condition,
    },
    #[error("participant {0} cannot be paired with itself")]
    SelfPair(String),
    #[error("no peers to aggregate")]
    NoPeers,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One participant's segment embeddings for one (story, condition) recall.
#[derive(Debug, Clone)]
pub struct ParticipantRecall {
    pub participant_id: String,
    pub group: Group,
    pub language: String,
    pub story_id: String,
    pub condition: Condition,
    pub embeddings: Vec<EmbeddingVector>,
}

/// Scores for one recall x recall pair. Divergence is directional: the
/// target participant supplies the rows, the peer the columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub original_order: f64,
    pub reversed_order: f64,
    pub temporal_divergence: f64,
}

/// Mean pair scores over one peer partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub original_order: f64,
    pub reversed_order: f64,
    pub temporal_divergence: f64,
    pub pairs: usize,
}

/// Per-peer scores plus own/other-group aggregates for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct IscScores {
    /// `(peer participant id, scores)`, in peer order.
    pub per_pair: Vec<(String, PairScores)>,
    pub own_group: Option<GroupMeans>,
    pub other_group: Option<GroupMeans>,
}

fn check_comparable(a: &ParticipantRecall, b: &ParticipantRecall) -> Result<(), IscError> {
    if a.participant_id == b.participant_id {
        return Err(IscError::SelfPair(a.participant_id.clone()));
    }
    if a.story_id != b.story_id || a.condition != b.condition {
        return Err(IscError::IncomparablePair {
            a_story: a.story_id.clone(),
            a_cond: a.condition,
            b_story: b.story_id.clone(),
            b_cond: b.condition,
        });
    }
    Ok(())
}

/// The pair's recall x recall matrix, rows = `a`, columns = `b`.
pub fn isc_matrix(
    a: &ParticipantRecall,
    b: &ParticipantRecall,
) -> Result<SimilarityMatrix, IscError> {
    check_comparable(a, b)?;
    let m = build_matrix(&a.embeddings, &b.embeddings)
        .map_err(MetricsError::from)?
        .with_labels(
            format!("recall/{}/{}", a.participant_id, a.story_id),
            format!("recall/{}/{}", b.participant_id, b.story_id),
        );
    Ok(m)
}

/// Order scores and divergence for one pair (rows = `a`).
pub fn isc_pair(a: &ParticipantRecall, b: &ParticipantRecall) -> Result<PairScores, IscError> {
    let m = isc_matrix(a, b)?;
    let (original_order, reversed_order) = metrics::order_scores(&m)?;
    let (_, max_indices) = metrics::max_recall(&m)?;
    Ok(PairScores {
        original_order,
        reversed_order,
        temporal_divergence: metrics::temporal_divergence(&max_indices),
    })
}

fn mean_scores(scores: &[PairScores]) -> Option<GroupMeans> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(GroupMeans {
        original_order: scores.iter().map(|s| s.original_order).sum::<f64>() / n,
        reversed_order: scores.iter().map(|s| s.reversed_order).sum::<f64>() / n,
        temporal_divergence: scores.iter().map(|s| s.temporal_divergence).sum::<f64>() / n,
        pairs: scores.len(),
    })
}

/// Score `target` against every peer and aggregate by group membership.
///
/// An absent partition (no own-group or no other-group peers) is reported
/// as `None`, never as zero.
pub fn isc_aggregate(
    target: &ParticipantRecall,
    peers: &[ParticipantRecall],
) -> Result<IscScores, IscError> {
    if peers.is_empty() {
        return Err(IscError::NoPeers);
    }
    let pair_scores = crate::exec::try_map(peers, |peer| isc_pair(target, peer))?;
    let per_pair: Vec<(String, PairScores)> = peers
        .iter()
        .map(|p| p.participant_id.clone())
        .zip(pair_scores.iter().copied())
        .collect();
    let own: Vec<PairScores> = peers
        .iter()
        .zip(&pair_scores)
        .filter(|(p, _)| p.group == target.group)
        .map(|(_, s)| *s)
        .collect();
    let other: Vec<PairScores> = peers
        .iter()
        .zip(&pair_scores)
        .filter(|(p, _)| p.group != target.group)
        .map(|(_, s)| *s)
        .collect();
    debug_assert_eq!(own.len() + other.len(), peers.len());
    Ok(IscScores {
        per_pair,
        own_group: mean_scores(&own),
        other_group: mean_scores(&other),
    })
}
