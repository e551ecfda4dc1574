//! Seeded synthetic texts and perturbations.
//!
//! Generates pseudo-word stories, recall segments derived from a story's
//! own windows, and controlled degradations (reversal, out-of-vocabulary
//! replacement). Together with the stub embedder this forms a fully
//! offline oracle: the expected direction of every recall metric under a
//! known perturbation is determined by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::segment::{segment, tokenize, SegmentError};

const ONSETS: [&str; 12] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, marker: Option<&str>) -> String {
    let syllables = rng.gen_range(2..=4);
    let mut word = String::new();
    if let Some(m) = marker {
        word.push_str(m);
    }
    for _ in 0..syllables {
        word.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        word.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    word
}

/// Deterministic pseudo-word text of exactly `words` words.
pub fn story_text(seed: u64, words: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words)
        .map(|_| pseudo_word(&mut rng, None))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pseudo-word text guaranteed to share no words with [`story_text`]
/// output (every word carries the `zq` marker prefix, which the story
/// generator never emits).
pub fn oov_text(seed: u64, words: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ddf_00d5_eed5);
    (0..words)
        .map(|_| pseudo_word(&mut rng, Some("zq")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The story's own window texts: the cleanest possible synthetic recall.
pub fn story_segments(story: &str, n: usize, overlap: f64) -> Result<Vec<String>, SegmentError> {
    let tokens = tokenize(story)?;
    Ok(segment(&tokens, n, overlap)?.texts(&tokens))
}

/// Replace `k` randomly chosen segments with out-of-vocabulary text of the
/// same word count. Choices are nested: the segments replaced for `k` are
/// a subset of those replaced for any larger `k` under the same seed.
pub fn replace_segments(segments: &[String], k: usize, seed: u64) -> Vec<String> {
    assert!(k <= segments.len());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = segments.to_vec();
    for (slot, &idx) in order.iter().take(k).enumerate() {
        let words = segments[idx].split_whitespace().count();
        out[idx] = oov_text(seed.wrapping_mul(31).wrapping_add(slot as u64), words);
    }
    out
}
