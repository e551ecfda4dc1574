//! Study manifest: the declarative description of a batch run.
//!
//! A manifest names the stories (one entry per story-id/language variant),
//! the participants, the recall transcripts, and the analysis settings.
//! Validation checks every referential and design invariant up front and
//! reports all violations at once, each with a JSON-pointer path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::ProviderConfig;
use crate::rater::RaterConfig;
use crate::types::{Condition, Group};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// JSON-pointer to the offending field.
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("manifest invalid:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One (story, language) text variant. Variants sharing a `story_id` are
/// the same story; a participant is scored against the variant matching
/// their language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryEntry {
    pub story_id: String,
    pub language: String,
    /// Listening condition per participant id.
    #[serde(default)]
    pub condition_map: BTreeMap<String, Condition>,
    pub text_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participant {
    pub participant_id: String,
    pub group: Group,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecallEntry {
    pub participant_id: String,
    pub story_id: String,
    pub transcript_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    Embedding,
    Rating,
    Both,
}

impl ScoringMode {
    pub fn includes_embedding(self) -> bool {
        matches!(self, ScoringMode::Embedding | ScoringMode::Both)
    }

    pub fn includes_rating(self) -> bool {
        matches!(self, ScoringMode::Rating | ScoringMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_segment_counts")]
    pub segment_counts: Vec<usize>,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_mode")]
    pub mode: ScoringMode,
    /// Chance controls for embedding-mode scoring.
    #[serde(default = "default_true")]
    pub chance: bool,
    /// Chance controls for rating-mode scoring (costly; off by default).
    #[serde(default)]
    pub rating_chance: bool,
    /// Intersubject correlation (embedding mode only).
    #[serde(default = "default_true")]
    pub isc: bool,
    /// Dump every pairwise recall x recall matrix (O(P^2) files).
    #[serde(default)]
    pub dump_isc_matrices: bool,
    /// Run transcripts through the punctuation-repair prompt first.
    #[serde(default)]
    pub repair_punctuation: bool,
    /// Treat a word-sequence change during repair as a hard error.
    #[serde(default)]
    pub strict_word_guard: bool,
    #[serde(default)]
    pub embedding: ProviderConfig,
    #[serde(default)]
    pub rater: RaterConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_segment_counts() -> Vec<usize> {
    vec![10]
}

fn default_overlap() -> f64 {
    0.2
}

fn default_mode() -> ScoringMode {
    ScoringMode::Embedding
}

fn default_true() -> bool {
    true
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            segment_counts: default_segment_counts(),
            overlap: default_overlap(),
            mode: default_mode(),
            chance: true,
            rating_chance: false,
            isc: true,
            dump_isc_matrices: false,
            repair_punctuation: false,
            strict_word_guard: false,
            embedding: ProviderConfig::default(),
            rater: RaterConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub stories: Vec<StoryEntry>,
    pub participants: Vec<Participant>,
    pub recalls: Vec<RecallEntry>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_schema_version() -> u32 {
    MANIFEST_SCHEMA_VERSION
}

fn id_ok(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl StudyManifest {
    /// Parse and validate a manifest file. Relative text paths are
    /// resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: StudyManifest = serde_json::from_slice(&bytes)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for story in &mut manifest.stories {
            if story.text_path.is_relative() {
                story.text_path = base.join(&story.text_path);
            }
        }
        for recall in &mut manifest.recalls {
            if recall.transcript_path.is_relative() {
                recall.transcript_path = base.join(&recall.transcript_path);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Condition labels per story id, merged over language variants.
    /// Conflicting labels are caught by [`validate`](Self::validate).
    pub fn conditions_for(&self, participant_id: &str) -> BTreeMap<String, Condition> {
        let mut out = BTreeMap::new();
        for story in &self.stories {
            if let Some(c) = story.condition_map.get(participant_id) {
                out.insert(story.story_id.clone(), *c);
            }
        }
        out
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.participant_id == id)
    }

    /// The text variant for (story, language), if declared.
    pub fn story_variant(&self, story_id: &str, language: &str) -> Option<&StoryEntry> {
        self.stories
            .iter()
            .find(|s| s.story_id == story_id && s.language == language)
    }

    /// Check every referential and design invariant, reporting all
    /// violations with JSON-pointer paths.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut diags: Vec<Diagnostic> = Vec::new();
        let mut push = |pointer: String, message: String| {
            diags.push(Diagnostic { pointer, message });
        };

        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            push(
                "/schema_version".into(),
                format!(
                    "unsupported version {} (expected {MANIFEST_SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }

        if self.stories.is_empty() {
            push("/stories".into(), "at least one story is required".into());
        }
        if self.participants.is_empty() {
            push(
                "/participants".into(),
                "at least one participant is required".into(),
            );
        }

        let mut participant_ids = BTreeSet::new();
        for (i, p) in self.participants.iter().enumerate() {
            if !id_ok(&p.participant_id) {
                push(
                    format!("/participants/{i}/participant_id"),
                    format!("invalid id {:?} (alphanumeric, '_', '-')", p.participant_id),
                );
            }
            if !participant_ids.insert(p.participant_id.clone()) {
                push(
                    format!("/participants/{i}/participant_id"),
                    format!("duplicate participant {:?}", p.participant_id),
                );
            }
        }

        let mut variant_keys = BTreeSet::new();
        let mut story_ids = BTreeSet::new();
        let mut merged_conditions: BTreeMap<(String, String), (usize, Condition)> = BTreeMap::new();
        for (i, s) in self.stories.iter().enumerate() {
            if !id_ok(&s.story_id) {
                push(
                    format!("/stories/{i}/story_id"),
                    format!("invalid id {:?} (alphanumeric, '_', '-')", s.story_id),
                );
            }
            if s.language.trim().is_empty() {
                push(format!("/stories/{i}/language"), "language tag is empty".into());
            }
            if !variant_keys.insert((s.story_id.clone(), s.language.clone())) {
                push(
                    format!("/stories/{i}"),
                    format!("duplicate variant ({}, {})", s.story_id, s.language),
                );
            }
            story_ids.insert(s.story_id.clone());
            if !s.text_path.is_file() {
                push(
                    format!("/stories/{i}/text_path"),
                    format!("file not found: {}", s.text_path.display()),
                );
            }
            for (pid, cond) in &s.condition_map {
                if !participant_ids.contains(pid) {
                    push(
                        format!("/stories/{i}/condition_map/{pid}"),
                        format!("unknown participant {pid:?}"),
                    );
                }
                match merged_conditions.entry((s.story_id.clone(), pid.clone())) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert((i, *cond));
                    }
                    std::collections::btree_map::Entry::Occupied(e) => {
                        if e.get().1 != *cond {
                            push(
                                format!("/stories/{i}/condition_map/{pid}"),
                                format!(
                                    "condition conflicts with /stories/{}/condition_map/{pid}",
                                    e.get().0
                                ),
                            );
                        }
                    }
                }
            }
        }

        let mut recall_keys = BTreeSet::new();
        for (i, r) in self.recalls.iter().enumerate() {
            let participant = self.participant(&r.participant_id);
            if participant.is_none() {
                push(
                    format!("/recalls/{i}/participant_id"),
                    format!("unknown participant {:?}", r.participant_id),
                );
            }
            if !story_ids.contains(&r.story_id) {
                push(
                    format!("/recalls/{i}/story_id"),
                    format!("unknown story {:?}", r.story_id),
                );
            } else if let Some(p) = participant {
                if self.story_variant(&r.story_id, &p.language).is_none() {
                    push(
                        format!("/recalls/{i}/story_id"),
                        format!(
                            "story {:?} has no {} variant for participant {:?}",
                            r.story_id, p.language, r.participant_id
                        ),
                    );
                }
                if !merged_conditions
                    .contains_key(&(r.story_id.clone(), r.participant_id.clone()))
                {
                    push(
                        format!("/recalls/{i}"),
                        format!(
                            "no condition assigned for ({}, {})",
                            r.participant_id, r.story_id
                        ),
                    );
                }
            }
            if !recall_keys.insert((r.participant_id.clone(), r.story_id.clone())) {
                push(
                    format!("/recalls/{i}"),
                    format!(
                        "duplicate recall for ({}, {})",
                        r.participant_id, r.story_id
                    ),
                );
            }
            if !r.transcript_path.is_file() {
                push(
                    format!("/recalls/{i}/transcript_path"),
                    format!("file not found: {}", r.transcript_path.display()),
                );
            }
        }

        let a = &self.analysis;
        if a.segment_counts.is_empty() {
            push(
                "/analysis/segment_counts".into(),
                "at least one segment count is required".into(),
            );
        }
        for (i, &n) in a.segment_counts.iter().enumerate() {
            if n < 6 {
                push(
                    format!("/analysis/segment_counts/{i}"),
                    format!("segment count {n} too small (primacy/recency need n >= 6)"),
                );
            }
        }
        if !(0.0..1.0).contains(&a.overlap) {
            push(
                "/analysis/overlap".into(),
                format!("overlap {} outside [0, 1)", a.overlap),
            );
        }
        if a.embedding.dim < 3 {
            push(
                "/analysis/embedding/dim".into(),
                format!(
                    "dim {} too small (rank correlation needs >= 3)",
                    a.embedding.dim
                ),
            );
        }
        if let Err(e) = a.embedding.validate() {
            push("/analysis/embedding".into(), e.to_string());
        }
        if a.mode.includes_rating() || a.repair_punctuation {
            if let Err(e) = a.rater.validate() {
                push("/analysis/rater".into(), e.to_string());
            }
        }

        if diags.is_empty() {
            Ok(())
        } else {
            Err(ManifestError::Invalid(diags))
        }
    }
}
