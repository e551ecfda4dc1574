//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retell_core::embed::stub_embed;
use retell_core::manifest::StudyManifest;
use retell_core::matrix::{build_matrix, fisher_z, spearman};
use retell_core::metrics::{
    self, chance_metrics, row_distinctiveness, temporal_divergence, RecallMetrics,
};
use retell_core::rater::{self, RaterConfig, ScriptedChatProvider};
use retell_core::report::diff_reports;
use retell_core::segment::{segment, tokenize};
use retell_core::synthetic::{replace_segments, story_segments, story_text};
use retell_core::types::{Condition, Group};
use retell_core::{isc, pipeline};

fn criterion<F: FnOnce() + std::panic::UnwindSafe>(id: u32, name: &str, f: F) {
    let result = std::panic::catch_unwind(f);
    match &result {
        Ok(()) => println!("acceptance criterion {id:2} [{name}]: PASS"),
        Err(_) => println!("acceptance criterion {id:2} [{name}]: FAIL"),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn toy_manifest_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy/manifest.json")
}

fn ceiling() -> f64 {
    (1.0f64 - 1e-7).atanh() // ~8.40562
}

#[test]
fn c01_spearman_oracle() {
    criterion(1, "spearman matches brute-force oracle", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut checked = 0usize;
        while checked < 10_000 {
            let len = 3 + (checked % 10); // lengths 3..=12
            let ties = checked % 2 == 0;
            let x = common::random_vector(&mut rng, len, ties);
            let y = common::random_vector(&mut rng, len, ties);
            if !(common::has_rank_variance(&x) && common::has_rank_variance(&y)) {
                continue;
            }
            let engine = spearman(&x, &y).unwrap();
            let oracle = common::spearman_oracle(&x, &y);
            assert!(
                (engine - oracle).abs() <= 1e-12,
                "pair {checked}: engine {engine} vs oracle {oracle}"
            );
            checked += 1;
        }
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    });
}

#[test]
fn c02_analytic_metric_values() {
    criterion(2, "analytic metric values", || {
        let identity: Vec<usize> = (1..=10).collect();
        assert_eq!(temporal_divergence(&identity), 0.0);

        let mut swapped = identity.clone();
        swapped.swap(0, 1);
        assert!((temporal_divergence(&swapped) - 0.2f64.sqrt()).abs() <= 1e-12);

        let reversed: Vec<usize> = (1..=10).rev().collect();
        assert!((temporal_divergence(&reversed) - 33f64.sqrt()).abs() <= 1e-12);

        // row [0.8, 0.2 x9]: mean 0.26, sample SD sqrt(0.036),
        // peak z = 0.54 / sqrt(0.036) = 2.846049894...
        let mut row = vec![0.2; 10];
        row[0] = 0.8;
        let d = row_distinctiveness(&row);
        assert!((d - 0.54 / 0.036f64.sqrt()).abs() <= 1e-12);
        assert!((d - 2.8460).abs() <= 1e-3);
    });
}

#[test]
fn c03_self_recall_identity() {
    criterion(3, "self-recall identity", || {
        let text = std::fs::read_to_string(
            toy_manifest_path().parent().unwrap().join("texts/market_day_en.txt"),
        )
        .unwrap();
        let tokens = tokenize(&text).unwrap();
        let segs = segment(&tokens, 10, 0.2).unwrap().texts(&tokens);
        let vectors: Vec<_> = segs.iter().map(|s| stub_embed(s, 768, 7)).collect();
        let m = build_matrix(&vectors, &vectors).unwrap();
        let r = RecallMetrics::from_matrix(&m).unwrap();
        assert_eq!(r.max_indices, (1..=10).collect::<Vec<_>>());
        assert_eq!(r.temporal_divergence, 0.0);
        assert_eq!(r.original_order, ceiling());
        assert!((r.original_order - 8.4056).abs() < 1e-3);
        assert!(r.original_order > r.reversed_order);
    });
}

#[test]
fn c04_order_sensitivity() {
    criterion(4, "reversed recall flips order scores", || {
        let story = story_text(11, 200);
        let segs = story_segments(&story, 10, 0.2).unwrap();
        let story_emb: Vec<_> = segs.iter().map(|s| stub_embed(s, 768, 3)).collect();
        let reversed_emb: Vec<_> = segs.iter().rev().map(|s| stub_embed(s, 768, 3)).collect();
        let m = build_matrix(&story_emb, &reversed_emb).unwrap();
        let r = RecallMetrics::from_matrix(&m).unwrap();
        assert!(r.reversed_order > r.original_order);
        assert!((r.temporal_divergence - 33f64.sqrt()).abs() <= 1e-9);
    });
}

#[test]
fn c05_degradation_sensitivity() {
    criterion(5, "degradation is monotone in k", || {
        let ks = [0usize, 2, 4, 6, 8, 10];
        let seeds: Vec<u64> = (0..24).collect();
        let mut mean_max = vec![0.0f64; ks.len()];
        let mut mean_orig = vec![0.0f64; ks.len()];
        for &seed in &seeds {
            let story = story_text(1000 + seed, 160);
            let segs = story_segments(&story, 10, 0.2).unwrap();
            let story_emb: Vec<_> = segs.iter().map(|s| stub_embed(s, 768, seed)).collect();
            for (ki, &k) in ks.iter().enumerate() {
                let recall = replace_segments(&segs, k, 7000 + seed);
                let recall_emb: Vec<_> =
                    recall.iter().map(|s| stub_embed(s, 768, seed)).collect();
                let m = build_matrix(&story_emb, &recall_emb).unwrap();
                let r = RecallMetrics::from_matrix(&m).unwrap();
                mean_max[ki] += r.max_recall / seeds.len() as f64;
                mean_orig[ki] += r.original_order / seeds.len() as f64;
            }
        }
        for w in mean_max.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "max_recall means not non-increasing: {mean_max:?}");
        }
        for w in mean_orig.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "original_order means not non-increasing: {mean_orig:?}"
            );
        }
    });
}

#[test]
fn c06_chance_separation() {
    criterion(6, "true recall beats chance for every pair", || {
        let n_stories = 6usize;
        let n_participants = 4usize;
        let stories: Vec<Vec<String>> = (0..n_stories)
            .map(|s| story_segments(&story_text(40 + s as u64, 150), 10, 0.2).unwrap())
            .collect();
        // participant recalls: own rendition of each story, 2 of 10
        // segments replaced
        let recalls: Vec<Vec<Vec<String>>> = (0..n_participants)
            .map(|p| {
                (0..n_stories)
                    .map(|s| {
                        replace_segments(&stories[s], 2, (p * 100 + s) as u64)
                    })
                    .collect()
            })
            .collect();
        let embed =
            |texts: &[String]| -> Vec<_> { texts.iter().map(|t| stub_embed(t, 768, 5)).collect() };
        for p in 0..n_participants {
            for s in 0..n_stories {
                let story_emb = embed(&stories[s]);
                let true_matrix = build_matrix(&story_emb, &embed(&recalls[p][s])).unwrap();
                let true_metrics = RecallMetrics::from_matrix(&true_matrix).unwrap();
                let controls: Vec<Vec<_>> = (0..n_stories)
                    .filter(|&other| other != s)
                    .map(|other| embed(&recalls[p][other]))
                    .collect();
                assert_eq!(controls.len(), 5);
                let chance = chance_metrics(&story_emb, &controls).unwrap();
                assert!(
                    true_metrics.max_recall > chance.max_recall,
                    "participant {p} story {s}: true {} <= chance {}",
                    true_metrics.max_recall,
                    chance.max_recall
                );
            }
        }
    });
}

#[test]
fn c07_segment_sweep() {
    criterion(7, "segment sweep 6/10/14/18", || {
        let mut manifest = StudyManifest::load(&toy_manifest_path()).unwrap();
        manifest.analysis.segment_counts = vec![6, 10, 14, 18];
        manifest.analysis.mode = retell_core::manifest::ScoringMode::Embedding;
        let out = tempfile::tempdir().unwrap();
        let report = pipeline::run(&manifest, out.path()).unwrap();

        for &n in &[6usize, 10, 14, 18] {
            let records: Vec<_> = report
                .results
                .iter()
                .filter(|r| r.segment_count == n)
                .collect();
            assert_eq!(records.len(), 4, "one record per (participant, story) at n={n}");
            for r in records {
                for field in [
                    r.metrics.max_recall,
                    r.metrics.original_order,
                    r.metrics.reversed_order,
                    r.metrics.distinctiveness,
                    r.metrics.temporal_divergence,
                    r.metrics.primacy,
                    r.metrics.middle,
                    r.metrics.recency,
                ] {
                    assert!(field.is_some(), "full metric set at n={n}");
                }
                assert!(r.chance.is_some());
            }
        }

        // segmenter coverage invariant at every count, on every toy text
        let texts_dir = toy_manifest_path().parent().unwrap().join("texts");
        for entry in std::fs::read_dir(texts_dir).unwrap() {
            let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
            let tokens = tokenize(&text).unwrap();
            for &n in &[6usize, 10, 14, 18] {
                let ranges = segment(&tokens, n, 0.2).unwrap();
                let ranges = ranges.ranges();
                assert_eq!(ranges[0].0, 0);
                assert_eq!(ranges[n - 1].1, tokens.word_count());
                for w in ranges.windows(2) {
                    assert!(w[1].0 <= w[0].1, "gap in coverage");
                }
            }
        }
    });
}

#[test]
fn c08_rating_backend() {
    criterion(8, "rating backend request accounting and metrics", || {
        // Segments carry their index so the scripted provider can rate
        // deterministically per cell.
        let story_segs: Vec<String> = (1..=10).map(|i| format!("story piece {i}")).collect();
        let recall_segs: Vec<String> = (1..=10).map(|j| format!("recall piece {j}")).collect();
        let cell_rating = |i: usize, j: usize, replicate: usize| -> u32 {
            let base = if i == j { 80 } else { (i * 7 + j * 13) % 50 };
            (base + replicate) as u32
        };
        let provider = ScriptedChatProvider::new(move |prompt, replicate| {
            let pick = |marker: &str| -> usize {
                let at = prompt.find(marker).expect("marker");
                let rest = &prompt[at + marker.len()..];
                let digits: String =
                    rest.chars().take_while(|c| c.is_ascii_digit()).collect();
                digits.parse().unwrap()
            };
            let i = pick("story piece ");
            let j = pick("recall piece ");
            format!("{}", cell_rating(i, j, replicate))
        });

        let cfg = RaterConfig::default();
        assert_eq!(cfg.replicate_count, 3);
        let rated = rater::rate_matrix(&story_segs, &recall_segs, &cfg, &provider, None).unwrap();
        assert_eq!(provider.calls(), 300, "100 cells x 3 replicates");

        // cell values are exactly mean/100 of the scripted replies
        for i in 1..=10usize {
            for j in 1..=10usize {
                let expect = (0..3).map(|k| cell_rating(i, j, k) as f64).sum::<f64>() / 3.0 / 100.0;
                assert_eq!(rated.matrix.get(i - 1, j - 1).unwrap(), expect);
            }
        }

        // Figure-1 metrics apply to the rating matrix unchanged; verify
        // against an independent scan of the expected value grid.
        let grid: Vec<Vec<f64>> = (1..=10)
            .map(|i| {
                (1..=10)
                    .map(|j| (0..3).map(|k| cell_rating(i, j, k) as f64).sum::<f64>() / 300.0)
                    .collect()
            })
            .collect();
        let r = RecallMetrics::from_matrix(&rated.matrix).unwrap();
        let expect_orig = (0..10).map(|i| grid[i][i]).sum::<f64>() / 10.0;
        let expect_max = (0..10)
            .map(|i| grid[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / 10.0;
        assert!((r.original_order - expect_orig).abs() < 1e-15);
        assert!((r.max_recall - expect_max).abs() < 1e-15);
        assert_eq!(r.max_indices, (1..=10).collect::<Vec<_>>());
        assert_eq!(r.temporal_divergence, 0.0);

        // diagonal-only mode: exactly 30 requests
        let diag_provider = ScriptedChatProvider::new(|_, _| "55".to_owned());
        let diag_cfg = RaterConfig {
            diagonal_only: true,
            ..RaterConfig::default()
        };
        let diag =
            rater::rate_matrix(&story_segs, &recall_segs, &diag_cfg, &diag_provider, None)
                .unwrap();
        assert_eq!(diag_provider.calls(), 30, "10 cells x 3 replicates");
        assert!(!diag.matrix.is_full());
        assert_eq!(diag.matrix.get(3, 3), Some(0.55));
        assert_eq!(diag.matrix.get(3, 4), None);
    });
}

#[test]
fn c09_isc_properties() {
    criterion(9, "intersubject correlation properties", || {
        let story = story_text(77, 180);
        let segs = story_segments(&story, 10, 0.2).unwrap();
        let make = |pid: &str, group: Group, seed: u64, k: usize| isc::ParticipantRecall {
            participant_id: pid.to_owned(),
            group,
            language: "en".to_owned(),
            story_id: "s1".to_owned(),
            condition: Condition::Clear,
            embeddings: replace_segments(&segs, k, seed)
                .iter()
                .map(|s| stub_embed(s, 768, 1))
                .collect(),
        };

        // order-score symmetry under pair swap, exact
        let a = make("a", Group::English, 1, 3);
        let b = make("b", Group::NonEnglish, 2, 4);
        let ab = isc::isc_pair(&a, &b).unwrap();
        let ba = isc::isc_pair(&b, &a).unwrap();
        assert_eq!(ab.original_order, ba.original_order);
        assert_eq!(ab.reversed_order, ba.reversed_order);

        // partition sizes sum to peer count
        let peers: Vec<_> = (0..7)
            .map(|i| {
                let group = if i % 2 == 0 { Group::English } else { Group::NonEnglish };
                make(&format!("p{i}"), group, 10 + i as u64, 2)
            })
            .collect();
        let scores = isc::isc_aggregate(&a, &peers).unwrap();
        let own = scores.own_group.map(|g| g.pairs).unwrap_or(0);
        let other = scores.other_group.map(|g| g.pairs).unwrap_or(0);
        assert_eq!(own + other, peers.len());

        // identical transcripts hit the Fisher ceiling with zero divergence
        let c = make("c", Group::English, 5, 0);
        let d = make("d", Group::NonEnglish, 6, 0);
        let pair = isc::isc_pair(&c, &d).unwrap();
        assert_eq!(pair.original_order, (1.0f64 - 1e-7).atanh());
        assert_eq!(pair.temporal_divergence, 0.0);
    });
}

#[test]
fn c10_end_to_end_determinism() {
    criterion(10, "byte-identical toy runs", || {
        let manifest = StudyManifest::load(&toy_manifest_path()).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();

        let started = Instant::now();
        pipeline::run(&manifest, out_a.path()).unwrap();
        let first_run = started.elapsed();
        assert!(first_run.as_secs_f64() < 10.0, "toy run took {first_run:?}");
        pipeline::run(&manifest, out_b.path()).unwrap();

        let report_a = std::fs::read(out_a.path().join("report.json")).unwrap();
        let report_b = std::fs::read(out_b.path().join("report.json")).unwrap();
        assert_eq!(report_a, report_b, "reports differ between runs");

        // every matrix dump byte-identical
        let mut rel_paths: Vec<PathBuf> = Vec::new();
        collect_files(&out_a.path().join("matrices"), Path::new(""), &mut rel_paths);
        assert!(!rel_paths.is_empty());
        for rel in &rel_paths {
            let a = std::fs::read(out_a.path().join("matrices").join(rel)).unwrap();
            let b = std::fs::read(out_b.path().join("matrices").join(rel)).unwrap();
            assert_eq!(a, b, "matrix dump {} differs", rel.display());
        }

        let va: serde_json::Value = serde_json::from_slice(&report_a).unwrap();
        let vb: serde_json::Value = serde_json::from_slice(&report_b).unwrap();
        let diff = diff_reports(&va, &vb, 0.0).unwrap();
        assert!(diff.is_empty(), "diff_reports found {} entries", diff.len());

        // fieldwise recheck: condition averages recompute from the report
        let report: retell_core::report::RunReport = serde_json::from_slice(&report_a).unwrap();
        for avg in &report.condition_averages {
            for (condition, side) in [
                (Condition::Clear, avg.clear.as_ref()),
                (Condition::Babble, avg.babble.as_ref()),
            ] {
                let Some(side) = side else { continue };
                let contributing: Vec<_> = report
                    .results
                    .iter()
                    .filter(|r| {
                        r.participant_id == avg.participant_id
                            && r.segment_count == avg.segment_count
                            && r.mode == avg.mode
                            && r.condition == condition
                    })
                    .collect();
                assert!(!contributing.is_empty());
                let mean_orig = contributing
                    .iter()
                    .map(|r| r.metrics.original_order.unwrap())
                    .sum::<f64>()
                    / contributing.len() as f64;
                let reported = side.original_order.unwrap();
                assert!(
                    (reported - mean_orig).abs() < 1e-14,
                    "condition average not recomputable: {reported} vs {mean_orig}"
                );
            }
        }
    });
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(root.join(rel)).unwrap() {
        let entry = entry.unwrap();
        let sub = rel.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            collect_files(root, &sub, out);
        } else {
            out.push(sub);
        }
    }
}
