//! Plot-ready exports from a completed run.
//!
//! Emits per-condition group-mean matrices (entrywise means over
//! participants, one file per group x condition x segment count x mode)
//! and long-format CSV tables with one row per (participant, story,
//! metric), ready for heatmap and violin-style plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::matrix::{MatrixDump, MatrixMode, SimilarityMatrix};
use crate::pipeline::PipelineError;
use crate::report::{round_sig15, RunReport, ScoreRecord};
use crate::types::{Condition, Group};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn mode_name(mode: MatrixMode) -> &'static str {
    match mode {
        MatrixMode::Embedding => "embedding",
        MatrixMode::Rating => "rating",
    }
}

fn load_matrix(run_dir: &Path, rel: &str) -> Result<SimilarityMatrix, PipelineError> {
    let path = run_dir.join(rel);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let dump: MatrixDump = serde_json::from_slice(&bytes)?;
    Ok(SimilarityMatrix::from_dump(dump)?)
}

/// Entrywise mean over matrices of equal size; a cell is averaged over the
/// matrices where it is present and stays absent when present in none.
fn mean_matrix(
    matrices: &[SimilarityMatrix],
    mode: MatrixMode,
) -> Result<SimilarityMatrix, PipelineError> {
    let n = matrices[0].n_rows();
    let mut sums = vec![0.0f64; n * n];
    let mut counts = vec![0usize; n * n];
    for m in matrices {
        for i in 0..n {
            for j in 0..n {
                if let Some(v) = m.get(i, j) {
                    sums[i * n + j] += v;
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let cells: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                None
            } else {
                Some(round_sig15(s / c as f64))
            }
        })
        .collect();
    Ok(SimilarityMatrix::sparse(mode, n, n, cells)?)
}

fn write_csv(
    path: &Path,
    records: &[&ScoreRecord],
    chance: bool,
) -> Result<bool, PipelineError> {
    let mut rows: Vec<(String, String, String, String, usize, &'static str, f64)> = Vec::new();
    for r in records {
        let metrics = if chance {
            match &r.chance {
                Some(c) => c,
                None => continue,
            }
        } else {
            &r.metrics
        };
        for (metric, value) in metrics.present_scalars() {
            rows.push((
                r.participant_id.clone(),
                r.group.to_string(),
                r.story_id.clone(),
                r.condition.to_string(),
                r.segment_count,
                metric,
                value,
            ));
        }
    }
    if rows.is_empty() {
        return Ok(false);
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    writer
        .write_record([
            "participant",
            "group",
            "story",
            "condition",
            "segment_count",
            "metric",
            "value",
        ])
        .map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    for (pid, group, story, cond, n, metric, value) in rows {
        writer
            .write_record([
                pid,
                group,
                story,
                cond,
                n.to_string(),
                metric.to_owned(),
                format!("{value}"),
            ])
            .map_err(|e| PipelineError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e),
            })?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(true)
}

/// Write plot data for `report` (whose matrix dumps live under `run_dir`)
/// into `out_dir`. Returns the files written, sorted.
pub fn emit_plot_data(
    report: &RunReport,
    run_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written: Vec<PathBuf> = Vec::new();

    // Group-mean matrices per (mode, group, condition, segment count).
    let mut buckets: BTreeMap<(MatrixMode, Group, Condition, usize), Vec<&ScoreRecord>> =
        BTreeMap::new();
    for r in &report.results {
        buckets
            .entry((r.mode, r.group, r.condition, r.segment_count))
            .or_default()
            .push(r);
    }
    for ((mode, group, condition, n), records) in &buckets {
        let matrices: Vec<SimilarityMatrix> = records
            .iter()
            .map(|r| load_matrix(run_dir, &r.matrix_path))
            .collect::<Result<_, _>>()?;
        let mean = mean_matrix(&matrices, *mode)?.with_labels(
            format!("story-mean/{group}/{condition}"),
            format!("recall-mean/{group}/{condition}"),
        );
        let name = format!(
            "mean_matrix_{}_{group}_{condition}_n{n:02}.json",
            mode_name(*mode)
        );
        let path = out_dir.join(&name);
        let mut text = serde_json::to_string(&mean.to_dump()?)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }

    // Long-format metric tables, one per mode, plus chance tables.
    for mode in [MatrixMode::Embedding, MatrixMode::Rating] {
        let records: Vec<&ScoreRecord> = report
            .results
            .iter()
            .filter(|r| r.mode == mode)
            .collect();
        if records.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("metrics_{}.csv", mode_name(mode)));
        if write_csv(&path, &records, false)? {
            written.push(path);
        }
        let chance_path = out_dir.join(format!("chance_metrics_{}.csv", mode_name(mode)));
        if write_csv(&chance_path, &records, true)? {
            written.push(chance_path);
        }
    }

    written.sort();
    Ok(written)
}
