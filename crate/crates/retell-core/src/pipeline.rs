//! Manifest-driven batch orchestration.
//!
//! A run walks every (participant, story) recall unit across the requested
//! segment counts and scoring modes: segment, embed or rate, build the
//! similarity matrix, extract metrics (plus chance controls), then reduce
//! to condition averages, intersubject-correlation aggregates, and group
//! descriptives. Matrices stream to `out_dir/partial` while the run is in
//! flight and move to `out_dir/matrices` on success, so a failed run
//! leaves its partial results and a resume marker behind.
//!
//! With stub providers and a fixed seed the report and every matrix dump
//! are byte-identical across runs: units are processed in sorted order,
//! aggregates reduce over already-rounded report values, and all floats
//! are rounded to 15 significant digits at the serialization boundary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::isc::{self, IscError, ParticipantRecall};
use crate::manifest::{ManifestError, StudyManifest};
use crate::matrix::{build_matrix, MatrixError, MatrixMode, SimilarityMatrix};
use crate::metrics::{self, MetricsError, RecallMetrics};
use crate::rater::{self, ChatProvider, RaterConfig, RaterError, RequestLog};
use crate::report::{
    round_sig15, ConditionAverageRecord, IscMeansReport, IscRecord, MetricsReport, ReportConfig,
    RunReport, ScoreRecord, StatRecord, REPORT_SCHEMA_VERSION,
};
use crate::segment::{segment, tokenize, SegmentError, TokenizedText};
use crate::types::{Condition, Group};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rater(#[from] RaterError),
    #[error("segmenting {doc}: {source}")]
    Segment {
        doc: String,
        source: SegmentError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Isc(#[from] IscError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("rating mode requires a chat provider")]
    MissingChatProvider,
    #[error("I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// True for failures of an external provider (exit code 3 territory),
    /// as opposed to validation or local I/O problems.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            PipelineError::Embed(e) => matches!(
                e,
                EmbedError::ProviderUnavailable { .. }
                    | EmbedError::BadResponse(_)
                    | EmbedError::DimMismatch { .. }
            ),
            PipelineError::Rater(e) => matches!(
                e,
                RaterError::ProviderUnavailable { .. }
                    | RaterError::Provider(_)
                    | RaterError::ParseRetriesExhausted { .. }
            ),
            PipelineError::MissingChatProvider => true,
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run with providers constructed from the manifest's analysis config.
pub fn run(manifest: &StudyManifest, out_dir: &Path) -> Result<RunReport, PipelineError> {
    let analysis = &manifest.analysis;
    let embed_provider = EmbeddingProvider::from_config(analysis.embedding.clone())?;
    let needs_chat = analysis.mode.includes_rating() || analysis.repair_punctuation;
    let chat: Option<Box<dyn ChatProvider>> = if needs_chat {
        Some(analysis.rater.build_provider()?)
    } else {
        None
    };
    run_with_providers(manifest, out_dir, &embed_provider, chat.as_deref())
}

struct RecallUnit {
    participant_id: String,
    group: Group,
    language: String,
    story_id: String,
    condition: Condition,
}

/// A matrix dump serialized and queued for writing.
struct PendingFile {
    rel_path: String,
    content: String,
}

fn matrix_json(m: &SimilarityMatrix) -> Result<String, PipelineError> {
    let mut dump = m.to_dump()?;
    for row in &mut dump.values {
        for cell in row {
            if let Some(v) = cell {
                *v = round_sig15(*v);
            }
        }
    }
    let mut text = serde_json::to_string(&dump)?;
    text.push('\n');
    Ok(text)
}

fn diagonal_report(m: &SimilarityMatrix) -> Result<MetricsReport, PipelineError> {
    let diag = m.diagonal()?;
    let original = diag.iter().sum::<f64>() / diag.len() as f64;
    let (primacy, middle, recency) = metrics::primacy_recency_from_diagonal(&diag)?;
    Ok(MetricsReport::from_diagonal(original, primacy, middle, recency))
}

/// Fieldwise mean over already-rounded report metrics. A field is averaged
/// only when present in every record, so diagonal-only shapes stay
/// diagonal-only. Per-row indices do not average.
fn average_reports(items: &[&MetricsReport]) -> Option<MetricsReport> {
    if items.is_empty() {
        return None;
    }
    let pick = |f: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let values: Option<Vec<f64>> = items.iter().map(|r| f(r)).collect();
        values.map(|vs| round_sig15(vs.iter().sum::<f64>() / vs.len() as f64))
    };
    Some(MetricsReport {
        max_recall: pick(|r| r.max_recall),
        max_indices: None,
        original_order: pick(|r| r.original_order),
        reversed_order: pick(|r| r.reversed_order),
        distinctiveness: pick(|r| r.distinctiveness),
        temporal_divergence: pick(|r| r.temporal_divergence),
        primacy: pick(|r| r.primacy),
        middle: pick(|r| r.middle),
        recency: pick(|r| r.recency),
    })
}

fn sample_stats(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (round_sig15(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (round_sig15(mean), Some(round_sig15(var.sqrt())))
}

/// Run the full pipeline with explicit providers (test injection point).
pub fn run_with_providers(
    manifest: &StudyManifest,
    out_dir: &Path,
    embed: &EmbeddingProvider,
    chat: Option<&dyn ChatProvider>,
) -> Result<RunReport, PipelineError> {
    manifest.validate()?;
    let analysis = &manifest.analysis;

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let partial = out_dir.join("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(io_err(&partial))?;
    }
    fs::create_dir_all(&partial).map_err(io_err(&partial))?;
    let marker_path = partial.join("resume.json");
    let marker = serde_json::json!({
        "status": "running",
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": analysis.seed,
    });
    fs::write(&marker_path, marker.to_string()).map_err(io_err(&marker_path))?;

    // Sorted recall units drive every loop below.
    let mut unit_entries: Vec<&crate::manifest::RecallEntry> = manifest.recalls.iter().collect();
    unit_entries.sort_by(|a, b| {
        (&a.participant_id, &a.story_id).cmp(&(&b.participant_id, &b.story_id))
    });

    let mut units: Vec<RecallUnit> = Vec::with_capacity(unit_entries.len());
    let mut recall_tokens: BTreeMap<(String, String), TokenizedText> = BTreeMap::new();
    for entry in &unit_entries {
        let participant = manifest
            .participant(&entry.participant_id)
            .expect("validated");
        let conditions = manifest.conditions_for(&entry.participant_id);
        let condition = *conditions.get(&entry.story_id).expect("validated");
        let raw = fs::read_to_string(&entry.transcript_path)
            .map_err(io_err(&entry.transcript_path))?;
        let text = if analysis.repair_punctuation {
            let chat = chat.ok_or(PipelineError::MissingChatProvider)?;
            rater::repair_punctuation(&raw, &analysis.rater, chat, analysis.strict_word_guard)?
                .text
        } else {
            raw
        };
        let doc = format!("recall/{}/{}", entry.participant_id, entry.story_id);
        let tokens = tokenize(&text)
            .map_err(|source| PipelineError::Segment { doc: doc.clone(), source })?;
        recall_tokens.insert(
            (entry.participant_id.clone(), entry.story_id.clone()),
            tokens,
        );
        units.push(RecallUnit {
            participant_id: entry.participant_id.clone(),
            group: participant.group,
            language: participant.language.clone(),
            story_id: entry.story_id.clone(),
            condition,
        });
    }

    // Story variants actually referenced by a unit.
    let mut story_tokens: BTreeMap<(String, String), TokenizedText> = BTreeMap::new();
    for unit in &units {
        let key = (unit.story_id.clone(), unit.language.clone());
        if story_tokens.contains_key(&key) {
            continue;
        }
        let entry = manifest
            .story_variant(&unit.story_id, &unit.language)
            .expect("validated");
        let raw = fs::read_to_string(&entry.text_path).map_err(io_err(&entry.text_path))?;
        let doc = format!("story/{}/{}", entry.story_id, entry.language);
        let tokens = tokenize(&raw)
            .map_err(|source| PipelineError::Segment { doc: doc.clone(), source })?;
        story_tokens.insert(key, tokens);
    }

    let request_log = if analysis.mode.includes_rating() {
        let path = out_dir.join("rating_requests.csv");
        Some(RequestLog::create(&path)?)
    } else {
        None
    };

    let mut results: Vec<ScoreRecord> = Vec::new();
    let mut isc_records: Vec<IscRecord> = Vec::new();
    let mut pending: Vec<PendingFile> = Vec::new();

    for &n in &analysis.segment_counts {
        let story_segs = segment_docs(&story_tokens, n, analysis.overlap, "story")?;
        let recall_segs = segment_docs(&recall_tokens, n, analysis.overlap, "recall")?;

        if analysis.mode.includes_embedding() {
            let (story_emb, recall_emb) =
                embed_all(embed, &story_segs, &recall_segs)?;
            score_embedding_units(
                &units,
                n,
                analysis.chance,
                &story_emb,
                &recall_emb,
                &mut results,
                &mut pending,
            )?;
            if analysis.isc {
                score_isc(
                    &units,
                    n,
                    analysis.dump_isc_matrices,
                    &recall_emb,
                    &mut isc_records,
                    &mut pending,
                )?;
            }
        }

        if analysis.mode.includes_rating() {
            let chat = chat.ok_or(PipelineError::MissingChatProvider)?;
            score_rating_units(
                &units,
                n,
                analysis.rating_chance,
                &analysis.rater,
                chat,
                request_log.as_ref(),
                &story_segs,
                &recall_segs,
                &mut results,
                &mut pending,
            )?;
        }
    }

    // Stream everything to the partial dir before promoting it. Recorded
    // paths are relative to out_dir; partial/ is renamed to matrices/ on
    // success, so the leading component is stripped here.
    for file in &pending {
        let rel = file
            .rel_path
            .strip_prefix("matrices/")
            .expect("matrix paths live under matrices/");
        let path = partial.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, &file.content).map_err(io_err(&path))?;
    }
    if let Some(log) = &request_log {
        log.flush()?;
    }

    let condition_averages = build_condition_averages(manifest, &units, &results);
    let (group_stats, language_stats) =
        build_stats(manifest, &condition_averages, &isc_records);

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: ReportConfig::new(
            analysis,
            manifest.participants.len(),
            manifest.stories.len(),
            manifest.recalls.len(),
        ),
        results,
        condition_averages,
        isc: isc_records,
        group_stats,
        language_stats,
    };

    // Promote: drop the marker, swap partial into place, then the report.
    fs::remove_file(&marker_path).map_err(io_err(&marker_path))?;
    let matrices_dir = out_dir.join("matrices");
    if matrices_dir.exists() {
        fs::remove_dir_all(&matrices_dir).map_err(io_err(&matrices_dir))?;
    }
    fs::rename(&partial, &matrices_dir).map_err(io_err(&matrices_dir))?;
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, report.to_json_string()).map_err(io_err(&report_path))?;

    Ok(report)
}

type DocSegments = BTreeMap<(String, String), Vec<String>>;
type DocEmbeddings = BTreeMap<(String, String), Vec<EmbeddingVector>>;

fn segment_docs(
    docs: &BTreeMap<(String, String), TokenizedText>,
    n: usize,
    overlap: f64,
    kind: &str,
) -> Result<DocSegments, PipelineError> {
    let mut out = BTreeMap::new();
    for (key, tokens) in docs {
        let segs = segment(tokens, n, overlap).map_err(|source| PipelineError::Segment {
            doc: format!("{kind}/{}/{}", key.0, key.1),
            source,
        })?;
        out.insert(key.clone(), segs.texts(tokens));
    }
    Ok(out)
}

/// One batch embedding call for every story and recall segment of this
/// segment count; results are sliced back per document.
fn embed_all(
    embed: &EmbeddingProvider,
    story_segs: &DocSegments,
    recall_segs: &DocSegments,
) -> Result<(DocEmbeddings, DocEmbeddings), PipelineError> {
    let mut texts: Vec<String> = Vec::new();
    let mut spans: Vec<(bool, (String, String), usize)> = Vec::new();
    for (key, segs) in story_segs {
        spans.push((true, key.clone(), segs.len()));
        texts.extend(segs.iter().cloned());
    }
    for (key, segs) in recall_segs {
        spans.push((false, key.clone(), segs.len()));
        texts.extend(segs.iter().cloned());
    }
    let vectors = embed.embed_batch(&texts)?;
    let mut story_emb = BTreeMap::new();
    let mut recall_emb = BTreeMap::new();
    let mut offset = 0;
    for (is_story, key, len) in spans {
        let slice = vectors[offset..offset + len].to_vec();
        offset += len;
        if is_story {
            story_emb.insert(key, slice);
        } else {
            recall_emb.insert(key, slice);
        }
    }
    Ok((story_emb, recall_emb))
}

fn unit_key(unit: &RecallUnit) -> (String, String) {
    (unit.participant_id.clone(), unit.story_id.clone())
}

fn score_embedding_units(
    units: &[RecallUnit],
    n: usize,
    chance: bool,
    story_emb: &DocEmbeddings,
    recall_emb: &DocEmbeddings,
    results: &mut Vec<ScoreRecord>,
    pending: &mut Vec<PendingFile>,
) -> Result<(), PipelineError> {
    let outcomes = crate::exec::try_map(units, |unit| {
        let story_key = (unit.story_id.clone(), unit.language.clone());
        let story = &story_emb[&story_key];
        let recall = &recall_emb[&unit_key(unit)];
        let matrix = build_matrix(story, recall)?.with_labels(
            format!("story/{}/{}", unit.story_id, unit.language),
            format!("recall/{}/{}", unit.participant_id, unit.story_id),
        );
        let metrics_full = RecallMetrics::from_matrix(&matrix)?;
        let matrix_path = format!(
            "matrices/embedding/n{n:02}/{}__{}.json",
            unit.participant_id, unit.story_id
        );
        let mut files = vec![PendingFile {
            rel_path: matrix_path.clone(),
            content: matrix_json(&matrix)?,
        }];

        let mut chance_report = None;
        let mut chance_paths = Vec::new();
        if chance {
            let mut bundles = Vec::new();
            for ((pid, other_sid), other) in recall_emb.iter() {
                if pid != &unit.participant_id || other_sid == &unit.story_id {
                    continue;
                }
                let control = build_matrix(story, other)?.with_labels(
                    format!("story/{}/{}", unit.story_id, unit.language),
                    format!("recall/{pid}/{other_sid}"),
                );
                bundles.push(RecallMetrics::from_matrix(&control)?.bundle());
                let rel = format!(
                    "matrices/embedding/n{n:02}/{}__{}__chance__{}.json",
                    unit.participant_id, unit.story_id, other_sid
                );
                files.push(PendingFile {
                    rel_path: rel.clone(),
                    content: matrix_json(&control)?,
                });
                chance_paths.push(rel);
            }
            if let Some(bundle) = metrics::mean_bundles(&bundles) {
                chance_report = Some(MetricsReport::from_bundle(&bundle));
            }
        }

        let record = ScoreRecord {
            participant_id: unit.participant_id.clone(),
            group: unit.group,
            language: unit.language.clone(),
            story_id: unit.story_id.clone(),
            condition: unit.condition,
            segment_count: n,
            mode: MatrixMode::Embedding,
            metrics: MetricsReport::from_metrics(&metrics_full),
            chance: chance_report,
            matrix_path,
            chance_matrix_paths: chance_paths,
        };
        Ok::<(ScoreRecord, Vec<PendingFile>), PipelineError>((record, files))
    })?;

    for (record, files) in outcomes {
        results.push(record);
        pending.extend(files);
    }
    Ok(())
}

fn score_isc(
    units: &[RecallUnit],
    n: usize,
    dump_matrices: bool,
    recall_emb: &DocEmbeddings,
    isc_records: &mut Vec<IscRecord>,
    pending: &mut Vec<PendingFile>,
) -> Result<(), PipelineError> {
    // Cohorts: everyone who heard the same story under the same condition.
    let mut cohorts: BTreeMap<(String, Condition), Vec<ParticipantRecall>> = BTreeMap::new();
    for unit in units {
        cohorts
            .entry((unit.story_id.clone(), unit.condition))
            .or_default()
            .push(ParticipantRecall {
                participant_id: unit.participant_id.clone(),
                group: unit.group,
                language: unit.language.clone(),
                story_id: unit.story_id.clone(),
                condition: unit.condition,
                embeddings: recall_emb[&unit_key(unit)].clone(),
            });
    }

    for ((story_id, condition), cohort) in &cohorts {
        if cohort.len() < 2 {
            continue;
        }
        if dump_matrices {
            for (i, a) in cohort.iter().enumerate() {
                for b in cohort.iter().skip(i + 1) {
                    let m = isc::isc_matrix(a, b)?;
                    let rel = format!(
                        "matrices/isc/n{n:02}/{story_id}__{condition}__{}__{}.json",
                        a.participant_id, b.participant_id
                    );
                    pending.push(PendingFile {
                        rel_path: rel,
                        content: matrix_json(&m)?,
                    });
                }
            }
        }
        let scored = crate::exec::try_map(cohort, |target| {
            let peers: Vec<ParticipantRecall> = cohort
                .iter()
                .filter(|p| p.participant_id != target.participant_id)
                .cloned()
                .collect();
            let scores = isc::isc_aggregate(target, &peers)?;
            Ok::<IscRecord, PipelineError>(IscRecord {
                participant_id: target.participant_id.clone(),
                group: target.group,
                story_id: story_id.clone(),
                condition: *condition,
                segment_count: n,
                peer_count: peers.len(),
                own_group: scores.own_group.as_ref().map(IscMeansReport::from_means),
                other_group: scores.other_group.as_ref().map(IscMeansReport::from_means),
            })
        })?;
        isc_records.extend(scored);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_rating_units(
    units: &[RecallUnit],
    n: usize,
    rating_chance: bool,
    rater_cfg: &RaterConfig,
    chat: &dyn ChatProvider,
    log: Option<&RequestLog>,
    story_segs: &DocSegments,
    recall_segs: &DocSegments,
    results: &mut Vec<ScoreRecord>,
    pending: &mut Vec<PendingFile>,
) -> Result<(), PipelineError> {
    for unit in units {
        let story_key = (unit.story_id.clone(), unit.language.clone());
        let story = &story_segs[&story_key];
        let recall = &recall_segs[&unit_key(unit)];
        let rated = rater::rate_matrix(story, recall, rater_cfg, chat, log)?;
        let matrix = rated.matrix.with_labels(
            format!("story/{}/{}", unit.story_id, unit.language),
            format!("recall/{}/{}", unit.participant_id, unit.story_id),
        );
        let matrix_path = format!(
            "matrices/rating/n{n:02}/{}__{}.json",
            unit.participant_id, unit.story_id
        );
        pending.push(PendingFile {
            rel_path: matrix_path.clone(),
            content: matrix_json(&matrix)?,
        });

        let metrics_report = if rater_cfg.diagonal_only {
            diagonal_report(&matrix)?
        } else {
            MetricsReport::from_metrics(&RecallMetrics::from_matrix(&matrix)?)
        };

        let mut chance_report = None;
        let mut chance_paths = Vec::new();
        if rating_chance {
            let mut reports: Vec<MetricsReport> = Vec::new();
            for ((pid, other_sid), other) in recall_segs.iter() {
                if pid != &unit.participant_id || other_sid == &unit.story_id {
                    continue;
                }
                let control = rater::rate_matrix(story, other, rater_cfg, chat, log)?;
                let control_matrix = control.matrix.with_labels(
                    format!("story/{}/{}", unit.story_id, unit.language),
                    format!("recall/{pid}/{other_sid}"),
                );
                let rel = format!(
                    "matrices/rating/n{n:02}/{}__{}__chance__{}.json",
                    unit.participant_id, unit.story_id, other_sid
                );
                pending.push(PendingFile {
                    rel_path: rel.clone(),
                    content: matrix_json(&control_matrix)?,
                });
                chance_paths.push(rel);
                reports.push(if rater_cfg.diagonal_only {
                    diagonal_report(&control_matrix)?
                } else {
                    MetricsReport::from_metrics(&RecallMetrics::from_matrix(&control_matrix)?)
                });
            }
            let refs: Vec<&MetricsReport> = reports.iter().collect();
            chance_report = average_reports(&refs);
        }

        results.push(ScoreRecord {
            participant_id: unit.participant_id.clone(),
            group: unit.group,
            language: unit.language.clone(),
            story_id: unit.story_id.clone(),
            condition: unit.condition,
            segment_count: n,
            mode: MatrixMode::Rating,
            metrics: metrics_report,
            chance: chance_report,
            matrix_path,
            chance_matrix_paths: chance_paths,
        });
    }
    Ok(())
}

/// Condition averages reduce over the (already rounded) report records, so
/// every average is exactly recomputable from the report itself.
fn build_condition_averages(
    manifest: &StudyManifest,
    units: &[RecallUnit],
    results: &[ScoreRecord],
) -> Vec<ConditionAverageRecord> {
    let mut participants: Vec<&str> = units
        .iter()
        .map(|u| u.participant_id.as_str())
        .collect();
    participants.dedup();

    let mut out = Vec::new();
    for &n in &manifest.analysis.segment_counts {
        for mode in [MatrixMode::Embedding, MatrixMode::Rating] {
            for pid in &participants {
                let mine: Vec<&ScoreRecord> = results
                    .iter()
                    .filter(|r| {
                        r.participant_id == *pid && r.segment_count == n && r.mode == mode
                    })
                    .collect();
                if mine.is_empty() {
                    continue;
                }
                let group = mine[0].group;
                let clear: Vec<&MetricsReport> = mine
                    .iter()
                    .filter(|r| r.condition == Condition::Clear)
                    .map(|r| &r.metrics)
                    .collect();
                let babble: Vec<&MetricsReport> = mine
                    .iter()
                    .filter(|r| r.condition == Condition::Babble)
                    .map(|r| &r.metrics)
                    .collect();
                out.push(ConditionAverageRecord {
                    participant_id: (*pid).to_owned(),
                    group,
                    segment_count: n,
                    mode,
                    clear: average_reports(&clear),
                    babble: average_reports(&babble),
                });
            }
        }
    }
    out
}

fn push_stats(
    out: &mut Vec<StatRecord>,
    label: &str,
    condition: Condition,
    n: usize,
    mode: MatrixMode,
    metric: &str,
    values: &[f64],
) {
    if values.is_empty() {
        return;
    }
    let (mean, sd) = sample_stats(values);
    out.push(StatRecord {
        label: label.to_owned(),
        condition,
        segment_count: n,
        mode,
        metric: metric.to_owned(),
        mean,
        sd,
        n: values.len(),
    });
}

fn descriptives_over(
    records: &[&ConditionAverageRecord],
    isc_records: &[&IscRecord],
    label: &str,
    segment_counts: &[usize],
    out: &mut Vec<StatRecord>,
) {
    for &n in segment_counts {
        for mode in [MatrixMode::Embedding, MatrixMode::Rating] {
            for condition in [Condition::Clear, Condition::Babble] {
                let picks: Vec<&MetricsReport> = records
                    .iter()
                    .filter(|r| r.segment_count == n && r.mode == mode)
                    .filter_map(|r| match condition {
                        Condition::Clear => r.clear.as_ref(),
                        Condition::Babble => r.babble.as_ref(),
                    })
                    .collect();
                if picks.is_empty() {
                    continue;
                }
                for (metric, _) in picks[0].present_scalars() {
                    let values: Vec<f64> = picks
                        .iter()
                        .filter_map(|r| {
                            r.present_scalars()
                                .iter()
                                .find(|(m, _)| *m == metric)
                                .map(|(_, v)| *v)
                        })
                        .collect();
                    push_stats(out, label, condition, n, mode, metric, &values);
                }
            }
        }

        for condition in [Condition::Clear, Condition::Babble] {
            let picks: Vec<&IscRecord> = isc_records
                .iter()
                .copied()
                .filter(|r| r.segment_count == n && r.condition == condition)
                .collect();
            if picks.is_empty() {
                continue;
            }
            let lanes: [(&str, fn(&IscRecord) -> Option<&IscMeansReport>); 2] = [
                ("own", |r| r.own_group.as_ref()),
                ("other", |r| r.other_group.as_ref()),
            ];
            for (lane, getter) in lanes {
                let triples: Vec<&IscMeansReport> =
                    picks.iter().filter_map(|r| getter(r)).collect();
                if triples.is_empty() {
                    continue;
                }
                let fields: [(&str, fn(&IscMeansReport) -> f64); 3] = [
                    ("isc_original_order", |m| m.original_order),
                    ("isc_reversed_order", |m| m.reversed_order),
                    ("isc_temporal_divergence", |m| m.temporal_divergence),
                ];
                for (name, get) in fields {
                    let values: Vec<f64> = triples.iter().map(|m| get(m)).collect();
                    push_stats(
                        out,
                        label,
                        condition,
                        n,
                        MatrixMode::Embedding,
                        &format!("{name}_{lane}"),
                        &values,
                    );
                }
            }
        }
    }
}

fn build_stats(
    manifest: &StudyManifest,
    condition_averages: &[ConditionAverageRecord],
    isc_records: &[IscRecord],
) -> (Vec<StatRecord>, Vec<StatRecord>) {
    let segment_counts = &manifest.analysis.segment_counts;
    let mut group_stats = Vec::new();
    for group in [Group::English, Group::NonEnglish] {
        let records: Vec<&ConditionAverageRecord> = condition_averages
            .iter()
            .filter(|r| r.group == group)
            .collect();
        let isc: Vec<&IscRecord> = isc_records.iter().filter(|r| r.group == group).collect();
        if records.is_empty() && isc.is_empty() {
            continue;
        }
        descriptives_over(
            &records,
            &isc,
            &group.to_string(),
            segment_counts,
            &mut group_stats,
        );
    }

    // Per-language descriptives when at least two participants share a tag.
    let mut by_language: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &manifest.participants {
        *by_language.entry(p.language.as_str()).or_default() += 1;
    }
    let mut language_stats = Vec::new();
    for (language, count) in by_language {
        if count < 2 {
            continue;
        }
        let ids: Vec<&str> = manifest
            .participants
            .iter()
            .filter(|p| p.language == language)
            .map(|p| p.participant_id.as_str())
            .collect();
        let records: Vec<&ConditionAverageRecord> = condition_averages
            .iter()
            .filter(|r| ids.contains(&r.participant_id.as_str()))
            .collect();
        let isc: Vec<&IscRecord> = isc_records
            .iter()
            .filter(|r| ids.contains(&r.participant_id.as_str()))
            .collect();
        descriptives_over(&records, &isc, language, segment_counts, &mut language_stats);
    }

    (group_stats, language_stats)
}
