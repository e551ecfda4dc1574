//! Versioned run report and report diffing.
//!
//! The report carries every per-(participant, story, segment count, mode)
//! metric bundle plus condition averages, ISC aggregates, and group-level
//! descriptives. Matrices live in separate dump files referenced by
//! relative path, keeping the report diff-able and the matrices
//! plot-ready. All numbers are rounded to 15 significant digits before
//! serialization so reports are byte-stable across platforms.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::isc::GroupMeans;
use crate::manifest::{AnalysisConfig, ScoringMode};
use crate::matrix::MatrixMode;
use crate::metrics::{MetricsBundle, RecallMetrics};
use crate::types::{Condition, Group};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Round to 15 significant digits; the serialization-boundary float policy.
pub fn round_sig15(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.14e}").parse().expect("roundtrip")
}

/// Metric fields present in a report record. Full matrices fill
/// everything; diagonal-only rating runs carry just the diagonal-derived
/// entries; averaged bundles drop the per-row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_indices: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original_order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reversed_order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinctiveness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal_divergence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primacy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub middle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recency: Option<f64>,
}

impl MetricsReport {
    pub fn from_metrics(m: &RecallMetrics) -> Self {
        Self {
            max_recall: Some(round_sig15(m.max_recall)),
            max_indices: Some(m.max_indices.clone()),
            original_order: Some(round_sig15(m.original_order)),
            reversed_order: Some(round_sig15(m.reversed_order)),
            distinctiveness: Some(round_sig15(m.distinctiveness)),
            temporal_divergence: Some(round_sig15(m.temporal_divergence)),
            primacy: Some(round_sig15(m.primacy)),
            middle: Some(round_sig15(m.middle)),
            recency: Some(round_sig15(m.recency)),
        }
    }

    pub fn from_bundle(b: &MetricsBundle) -> Self {
        Self {
            max_recall: Some(round_sig15(b.max_recall)),
            max_indices: None,
            original_order: Some(round_sig15(b.original_order)),
            reversed_order: Some(round_sig15(b.reversed_order)),
            distinctiveness: Some(round_sig15(b.distinctiveness)),
            temporal_divergence: Some(round_sig15(b.temporal_divergence)),
            primacy: Some(round_sig15(b.primacy)),
            middle: Some(round_sig15(b.middle)),
            recency: Some(round_sig15(b.recency)),
        }
    }

    /// Diagonal-only records: original order plus primacy/middle/recency.
    pub fn from_diagonal(original_order: f64, primacy: f64, middle: f64, recency: f64) -> Self {
        Self {
            original_order: Some(round_sig15(original_order)),
            primacy: Some(round_sig15(primacy)),
            middle: Some(round_sig15(middle)),
            recency: Some(round_sig15(recency)),
            ..Self::default()
        }
    }

    /// `(metric name, value)` pairs for every present scalar field.
    pub fn present_scalars(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        let fields: [(&'static str, Option<f64>); 8] = [
            ("max_recall", self.max_recall),
            ("original_order", self.original_order),
            ("reversed_order", self.reversed_order),
            ("distinctiveness", self.distinctiveness),
            ("temporal_divergence", self.temporal_divergence),
            ("primacy", self.primacy),
            ("middle", self.middle),
            ("recency", self.recency),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out
    }
}

/// One scored (participant, story, segment count, mode) unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub participant_id: String,
    pub group: Group,
    pub language: String,
    pub story_id: String,
    pub condition: Condition,
    pub segment_count: usize,
    pub mode: MatrixMode,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chance: Option<MetricsReport>,
    /// Matrix dump path relative to the run directory.
    pub matrix_path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chance_matrix_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAverageRecord {
    pub participant_id: String,
    pub group: Group,
    pub segment_count: usize,
    pub mode: MatrixMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clear: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub babble: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IscMeansReport {
    pub original_order: f64,
    pub reversed_order: f64,
    pub temporal_divergence: f64,
    pub pairs: usize,
}

impl IscMeansReport {
    pub fn from_means(m: &GroupMeans) -> Self {
        Self {
            original_order: round_sig15(m.original_order),
            reversed_order: round_sig15(m.reversed_order),
            temporal_divergence: round_sig15(m.temporal_divergence),
            pairs: m.pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IscRecord {
    pub participant_id: String,
    pub group: Group,
    pub story_id: String,
    pub condition: Condition,
    pub segment_count: usize,
    pub peer_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub own_group: Option<IscMeansReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other_group: Option<IscMeansReport>,
}

/// Descriptive mean/SD of one metric over one participant set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    /// Group label or language tag.
    pub label: String,
    pub condition: Condition,
    pub segment_count: usize,
    pub mode: MatrixMode,
    pub metric: String,
    pub mean: f64,
    /// Sample SD; absent when fewer than two values contribute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub n: usize,
}

/// Echo of the run configuration a report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub segment_counts: Vec<usize>,
    pub overlap: f64,
    pub mode: ScoringMode,
    pub chance: bool,
    pub rating_chance: bool,
    pub isc: bool,
    pub diagonal_only: bool,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub rater_model: String,
    pub replicate_count: usize,
    pub seed: u64,
    pub participants: usize,
    pub stories: usize,
    pub recalls: usize,
}

impl ReportConfig {
    pub fn new(analysis: &AnalysisConfig, participants: usize, stories: usize, recalls: usize) -> Self {
        Self {
            segment_counts: analysis.segment_counts.clone(),
            overlap: analysis.overlap,
            mode: analysis.mode,
            chance: analysis.chance,
            rating_chance: analysis.rating_chance,
            isc: analysis.isc,
            diagonal_only: analysis.rater.diagonal_only,
            embedding_model: analysis.embedding.model_id.clone(),
            embedding_dim: analysis.embedding.dim,
            rater_model: analysis.rater.model_id.clone(),
            replicate_count: analysis.rater.replicate_count,
            seed: analysis.seed,
            participants,
            stories,
            recalls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ReportConfig,
    pub results: Vec<ScoreRecord>,
    pub condition_averages: Vec<ConditionAverageRecord>,
    pub isc: Vec<IscRecord>,
    pub group_stats: Vec<StatRecord>,
    pub language_stats: Vec<StatRecord>,
}

impl RunReport {
    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

// ---------------------------------------------------------------------------
// Report diffing

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("schema versions differ: {a} vs {b}")]
    SchemaMismatch { a: Value, b: Value },
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("report is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffEntry {
    pub pointer: String,
    pub left: Value,
    pub right: Value,
}

/// Fieldwise diff of two report JSON trees.
///
/// Numeric leaves compare within `tolerance` (absolute); everything else
/// compares exactly. Both reports must carry the same `schema_version`.
pub fn diff_reports(a: &Value, b: &Value, tolerance: f64) -> Result<Vec<DiffEntry>, DiffError> {
    let va = a.get("schema_version").cloned().unwrap_or(Value::Null);
    let vb = b.get("schema_version").cloned().unwrap_or(Value::Null);
    if va != vb {
        return Err(DiffError::SchemaMismatch { a: va, b: vb });
    }
    let mut entries = Vec::new();
    walk(a, b, String::new(), tolerance, &mut entries);
    Ok(entries)
}

fn walk(a: &Value, b: &Value, pointer: String, tol: f64, out: &mut Vec<DiffEntry>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            if !((x - y).abs() <= tol || (x.is_nan() && y.is_nan())) {
                out.push(DiffEntry {
                    pointer,
                    left: a.clone(),
                    right: b.clone(),
                });
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            if xs.len() != ys.len() {
                out.push(DiffEntry {
                    pointer: format!("{pointer}/length"),
                    left: Value::from(xs.len()),
                    right: Value::from(ys.len()),
                });
            }
            for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                walk(x, y, format!("{pointer}/{i}"), tol, out);
            }
        }
        (Value::Object(xm), Value::Object(ym)) => {
            let keys: std::collections::BTreeSet<&String> =
                xm.keys().chain(ym.keys()).collect();
            for k in keys {
                match (xm.get(k), ym.get(k)) {
                    (Some(x), Some(y)) => walk(x, y, format!("{pointer}/{k}"), tol, out),
                    (x, y) => out.push(DiffEntry {
                        pointer: format!("{pointer}/{k}"),
                        left: x.cloned().unwrap_or(Value::Null),
                        right: y.cloned().unwrap_or(Value::Null),
                    }),
                }
            }
        }
        _ => {
            if a != b {
                out.push(DiffEntry {
                    pointer,
                    left: a.clone(),
                    right: b.clone(),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_sig15_caps_precision() {
        assert_eq!(round_sig15(0.0), 0.0);
        assert_eq!(round_sig15(1.0), 1.0);
        assert_eq!(round_sig15(0.1), 0.1);
        let x = 1.234_567_890_123_456_789;
        let r = round_sig15(x);
        assert!((r - x).abs() < 1e-14);
        assert_eq!(round_sig15(r), r);
    }

    #[test]
    fn diff_of_identical_is_empty() {
        let v: Value = serde_json::json!({
            "schema_version": 1,
            "results": [{"x": 1.0, "y": [1, 2, 3]}]
        });
        assert!(diff_reports(&v, &v, 0.0).unwrap().is_empty());
    }

    #[test]
    fn diff_respects_tolerance() {
        let a: Value = serde_json::json!({"schema_version": 1, "x": 1.0});
        let b: Value = serde_json::json!({"schema_version": 1, "x": 1.0 + 1e-13});
        assert!(diff_reports(&a, &b, 1e-12).unwrap().is_empty());
        let entries = diff_reports(&a, &b, 1e-14).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].pointer, "/x");
    }

    #[test]
    fn diff_reports_schema_mismatch() {
        let a: Value = serde_json::json!({"schema_version": 1});
        let b: Value = serde_json::json!({"schema_version": 2});
        assert!(matches!(
            diff_reports(&a, &b, 0.0),
            Err(DiffError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn diff_flags_missing_keys_and_length() {
        let a: Value = serde_json::json!({"schema_version": 1, "x": [1, 2], "only_a": true});
        let b: Value = serde_json::json!({"schema_version": 1, "x": [1, 2, 3]});
        let entries = diff_reports(&a, &b, 0.0).unwrap();
        let pointers: Vec<&str> = entries.iter().map(|e| e.pointer.as_str()).collect();
        assert!(pointers.contains(&"/x/length"));
        assert!(pointers.contains(&"/only_a"));
    }
}
