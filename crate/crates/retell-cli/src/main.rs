//! `retell` — batch scoring of free-recall transcripts against stories.
//!
//! Subcommands: `validate` a study manifest, `run` a full scoring batch,
//! `plot-data` to export heatmap/long-table files from a finished run, and
//! `diff` two run reports with a numeric tolerance.
//!
//! Exit codes: 0 ok, 2 validation error, 3 provider failure,
//! 4 diff exceeds tolerance, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use retell_core::manifest::{ManifestError, ScoringMode, StudyManifest};
use retell_core::pipeline::{self, PipelineError};
use retell_core::plot;
use retell_core::report::{diff_reports, DiffError, RunReport};

const EXIT_VALIDATION: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_DIFF: u8 = 4;

#[derive(Parser)]
#[command(name = "retell", version, about = "Automated scoring of free-recall transcripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a study manifest and print a normalized summary.
    Validate {
        /// Path to the manifest JSON.
        manifest: PathBuf,
    },
    /// Score every recall in the manifest and write a run report.
    Run {
        /// Path to the manifest JSON.
        manifest: PathBuf,
        #[command(flatten)]
        overrides: AnalysisOverrides,
        /// Output directory for report, matrices, and logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export plot-ready data from a completed run directory.
    PlotData {
        /// Run directory containing report.json and matrices/.
        #[arg(long)]
        run: PathBuf,
        /// Output directory (default: <run>/plot_data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two run reports numerically.
    Diff {
        left: PathBuf,
        right: PathBuf,
        /// Maximum allowed absolute difference per number.
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
    },
}

/// CLI-side overrides of the manifest's analysis block. Credentials are
/// never flags; providers read them from the environment.
#[derive(Args)]
struct AnalysisOverrides {
    /// Comma-separated segment counts, e.g. 6,10,14,18.
    #[arg(long, value_delimiter = ',')]
    segments: Option<Vec<usize>>,
    /// Overlap fraction in [0, 1).
    #[arg(long)]
    overlap: Option<f64>,
    /// Scoring backend: embedding, rating, or both.
    #[arg(long)]
    mode: Option<String>,
    /// Compute embedding-mode chance controls.
    #[arg(long)]
    chance: Option<bool>,
    /// Compute rating-mode chance controls (costly).
    #[arg(long)]
    rating_chance: Option<bool>,
    /// Compute intersubject correlation (embedding mode only).
    #[arg(long)]
    isc: Option<bool>,
    /// Rate only the diagonal cells (n-fold request reduction).
    #[arg(long)]
    diagonal_only: bool,
    /// JSON file overriding the embedding/rater provider configs.
    #[arg(long)]
    provider_config: Option<PathBuf>,
    /// Stub-embedding seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderOverrides {
    #[serde(default)]
    embedding: Option<retell_core::embed::ProviderConfig>,
    #[serde(default)]
    rater: Option<retell_core::rater::RaterConfig>,
}

fn parse_mode(s: &str) -> Result<ScoringMode, String> {
    match s {
        "embedding" => Ok(ScoringMode::Embedding),
        "rating" => Ok(ScoringMode::Rating),
        "both" => Ok(ScoringMode::Both),
        other => Err(format!("unknown mode {other:?} (embedding|rating|both)")),
    }
}

fn apply_overrides(
    manifest: &mut StudyManifest,
    overrides: &AnalysisOverrides,
) -> Result<(), String> {
    let analysis = &mut manifest.analysis;
    if let Some(segments) = &overrides.segments {
        analysis.segment_counts = segments.clone();
    }
    if let Some(overlap) = overrides.overlap {
        analysis.overlap = overlap;
    }
    if let Some(mode) = &overrides.mode {
        analysis.mode = parse_mode(mode)?;
    }
    if let Some(chance) = overrides.chance {
        analysis.chance = chance;
    }
    if let Some(rating_chance) = overrides.rating_chance {
        analysis.rating_chance = rating_chance;
    }
    if let Some(isc) = overrides.isc {
        analysis.isc = isc;
    }
    if overrides.diagonal_only {
        analysis.rater.diagonal_only = true;
    }
    if let Some(seed) = overrides.seed {
        analysis.seed = seed;
        analysis.embedding.seed = seed;
    }
    if let Some(path) = &overrides.provider_config {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: ProviderOverrides =
            serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(embedding) = parsed.embedding {
            analysis.embedding = embedding;
        }
        if let Some(rater) = parsed.rater {
            analysis.rater = rater;
        }
    }
    Ok(())
}

fn load_manifest(path: &PathBuf) -> Result<StudyManifest, ExitCode> {
    StudyManifest::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn cmd_validate(path: PathBuf) -> Result<(), ExitCode> {
    let manifest = load_manifest(&path)?;
    println!(
        "ok: {} stories ({} variants), {} participants, {} recalls",
        manifest
            .stories
            .iter()
            .map(|s| s.story_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        manifest.stories.len(),
        manifest.participants.len(),
        manifest.recalls.len()
    );
    println!(
        "analysis: segments {:?}, overlap {}, mode {:?}, seed {}",
        manifest.analysis.segment_counts,
        manifest.analysis.overlap,
        manifest.analysis.mode,
        manifest.analysis.seed
    );
    Ok(())
}

fn cmd_run(
    path: PathBuf,
    overrides: AnalysisOverrides,
    out: PathBuf,
) -> Result<(), ExitCode> {
    let mut manifest = load_manifest(&path)?;
    apply_overrides(&mut manifest, &overrides).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })?;
    manifest.validate().map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })?;

    match pipeline::run(&manifest, &out) {
        Ok(report) => {
            println!(
                "run complete: {} results, {} isc rows -> {}",
                report.results.len(),
                report.isc.len(),
                out.join("report.json").display()
            );
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                PipelineError::Manifest(ManifestError::Invalid(_)) => EXIT_VALIDATION,
                _ if e.is_provider_failure() => EXIT_PROVIDER,
                _ => 1,
            };
            Err(ExitCode::from(code))
        }
    }
}

fn cmd_plot_data(run: PathBuf, out: Option<PathBuf>) -> Result<(), ExitCode> {
    let report_path = run.join("report.json");
    let bytes = std::fs::read(&report_path).map_err(|e| {
        eprintln!("error: {}: {e}", report_path.display());
        ExitCode::from(1)
    })?;
    let report: RunReport = serde_json::from_slice(&bytes).map_err(|e| {
        eprintln!("error: {}: {e}", report_path.display());
        ExitCode::from(EXIT_VALIDATION)
    })?;
    let out = out.unwrap_or_else(|| run.join("plot_data"));
    let files = plot::emit_plot_data(&report, &run, &out).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_diff(left: PathBuf, right: PathBuf, tolerance: f64) -> Result<(), ExitCode> {
    let load = |p: &PathBuf| -> Result<serde_json::Value, ExitCode> {
        let bytes = std::fs::read(p).map_err(|e| {
            eprintln!("error: {}: {e}", p.display());
            ExitCode::from(1)
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            eprintln!("error: {}: {e}", p.display());
            ExitCode::from(EXIT_VALIDATION)
        })
    };
    let a = load(&left)?;
    let b = load(&right)?;
    match diff_reports(&a, &b, tolerance) {
        Ok(entries) if entries.is_empty() => {
            println!("reports match within tolerance {tolerance}");
            Ok(())
        }
        Ok(entries) => {
            for e in &entries {
                println!("{}: {} != {}", e.pointer, e.left, e.right);
            }
            eprintln!("{} differences exceed tolerance {tolerance}", entries.len());
            Err(ExitCode::from(EXIT_DIFF))
        }
        Err(e @ DiffError::SchemaMismatch { .. }) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(EXIT_VALIDATION))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(1))
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { manifest } => cmd_validate(manifest),
        Command::Run {
            manifest,
            overrides,
            out,
        } => cmd_run(manifest, overrides, out),
        Command::PlotData { run, out } => cmd_plot_data(run, out),
        Command::Diff {
            left,
            right,
            tolerance,
        } => cmd_diff(left, right, tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
