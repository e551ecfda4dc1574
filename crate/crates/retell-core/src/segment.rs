//! Word-window segmentation.
//!
//! A document is tokenized on Unicode whitespace and split into `n` equally
//! sized windows whose neighbours share a fixed fraction of words. With
//! word count `W`, segment count `n`, and overlap fraction `f`, the real
//! segment length is `L = W / (1 + (n-1)(1-f))` and the stride is
//! `s = L(1-f)`. Window `i` spans `[floor(i*s), floor(i*s + L))`; the last
//! window is extended to `W` so that every word is covered. Both the story
//! and the recall are segmented with their own word counts but the same
//! `(n, f)`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("text contains no tokens")]
    EmptyText,
    #[error("segment parameters out of range: n={n}, overlap={overlap} (need n >= 2, 0 <= overlap < 1)")]
    BadParams { n: usize, overlap: f64 },
    #[error("{words} words cannot be split into {n} segments with overlap {overlap}")]
    TooFewWords { words: usize, n: usize, overlap: f64 },
}

/// A whitespace-tokenized document. Punctuation stays attached to words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    tokens: Vec<String>,
}

impl TokenizedText {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn word_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Split `text` into maximal runs of non-whitespace characters.
pub fn tokenize(text: &str) -> Result<TokenizedText, SegmentError> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(SegmentError::EmptyText);
    }
    Ok(TokenizedText { tokens })
}

/// Ordered half-open word-index ranges over a [`TokenizedText`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedText {
    ranges: Vec<(usize, usize)>,
    segment_count: usize,
    overlap: f64,
}

impl SegmentedText {
    /// `(start, end)` word-index pairs, end exclusive.
    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    /// Joined window texts, in order.
    pub fn texts(&self, text: &TokenizedText) -> Vec<String> {
        self.ranges
            .iter()
            .map(|&(a, b)| text.tokens[a..b].join(" "))
            .collect()
    }
}

/// Split a tokenized text into `n` overlapping windows.
///
/// Errors with [`SegmentError::TooFewWords`] when the text cannot support
/// `n` distinct windows; parameters are never silently adjusted, since a
/// changed segment count would break comparability across participants.
pub fn segment(text: &TokenizedText, n: usize, overlap: f64) -> Result<SegmentedText, SegmentError> {
    if n < 2 || !(0.0..1.0).contains(&overlap) {
        return Err(SegmentError::BadParams { n, overlap });
    }
    let w = text.word_count();
    if w < 2 * n {
        return Err(SegmentError::TooFewWords {
            words: w,
            n,
            overlap,
        });
    }
    let len = w as f64 / (1.0 + (n as f64 - 1.0) * (1.0 - overlap));
    let stride = len * (1.0 - overlap);
    // A stride below one word would stall the floored start indices.
    if stride < 1.0 {
        return Err(SegmentError::TooFewWords {
            words: w,
            n,
            overlap,
        });
    }

    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let a = (i as f64 * stride).floor() as usize;
        let b = if i == n - 1 {
            w
        } else {
            (i as f64 * stride + len).floor() as usize
        };
        ranges.push((a, b));
    }
    // i*s + L and (i+1)*s agree in exact arithmetic when f = 0; guard the
    // one-word gap that floor can open when the two float paths round
    // across an integer.
    for i in 0..n - 1 {
        let next_start = ranges[i + 1].0;
        if ranges[i].1 < next_start {
            ranges[i].1 = next_start;
        }
    }

    Ok(SegmentedText {
        ranges,
        segment_count: n,
        overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> TokenizedText {
        tokenize(
            &(0..n)
                .map(|i| format!("w{i}"))
                .collect::<Vec<_>>()
                .join(" "),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_splits_on_whitespace() {
        let t = tokenize("A boy ran.").unwrap();
        assert_eq!(t.tokens(), ["A", "boy", "ran."]);
        assert_eq!(t.word_count(), 3);
    }

    #[test]
    fn tokenize_collapses_runs() {
        let t = tokenize("  a  b ").unwrap();
        assert_eq!(t.tokens(), ["a", "b"]);
    }

    #[test]
    fn tokenize_rejects_blank() {
        assert_eq!(tokenize("   \n\t "), Err(SegmentError::EmptyText));
    }

    #[test]
    fn tokenize_roundtrips() {
        let t = tokenize("ein kleiner Junge lief.").unwrap();
        let joined = t.tokens().join(" ");
        assert_eq!(tokenize(&joined).unwrap(), t);
    }

    #[test]
    fn exact_fit_case() {
        // W=82, n=10, f=0.2: L=10, s=8.
        let s = segment(&words(82), 10, 0.2).unwrap();
        let expect: Vec<(usize, usize)> = (0..10)
            .map(|i| (8 * i, 8 * i + 10))
            .map(|(a, b)| if b > 82 { (a, 82) } else { (a, b) })
            .collect();
        assert_eq!(s.ranges(), expect.as_slice());
        for w in s.ranges().windows(2) {
            assert_eq!(w[0].1 - w[1].0, 2); // 20% of L=10
        }
    }

    #[test]
    fn halving_with_zero_overlap() {
        let s = segment(&words(10), 2, 0.0).unwrap();
        assert_eq!(s.ranges(), [(0, 5), (5, 10)]);
    }

    #[test]
    fn fractional_case_w100() {
        // L = 100/8.2, s = 0.8L; starts evaluated per index with floor.
        let s = segment(&words(100), 10, 0.2).unwrap();
        let starts: Vec<usize> = s.ranges().iter().map(|r| r.0).collect();
        assert_eq!(starts, [0, 9, 19, 29, 39, 48, 58, 68, 78, 87]);
        assert_eq!(s.ranges()[9], (87, 100));
    }

    #[test]
    fn too_few_words_is_hard_error() {
        assert!(matches!(
            segment(&words(19), 10, 0.2),
            Err(SegmentError::TooFewWords { words: 19, n: 10, .. })
        ));
    }

    #[test]
    fn bad_params_rejected() {
        let t = words(50);
        assert!(matches!(segment(&t, 1, 0.2), Err(SegmentError::BadParams { .. })));
        assert!(matches!(segment(&t, 10, 1.0), Err(SegmentError::BadParams { .. })));
        assert!(matches!(segment(&t, 10, -0.1), Err(SegmentError::BadParams { .. })));
    }

    #[test]
    fn sub_word_stride_rejected() {
        // W=40, n=20, f=0.98: L ~= 29, stride ~= 0.58 words.
        assert!(matches!(
            segment(&words(40), 20, 0.98),
            Err(SegmentError::TooFewWords { .. })
        ));
    }

    #[test]
    fn determinism() {
        let t = words(314);
        assert_eq!(segment(&t, 10, 0.2).unwrap(), segment(&t, 10, 0.2).unwrap());
    }

    fn assert_invariants(w: usize, n: usize, f: f64) {
        let s = segment(&words(w), n, f).unwrap();
        let r = s.ranges();
        assert_eq!(r.len(), n);
        assert_eq!(r[0].0, 0);
        assert_eq!(r[n - 1].1, w);
        let len = w as f64 / (1.0 + (n as f64 - 1.0) * (1.0 - f));
        let mut covered = 0usize;
        for (i, &(a, b)) in r.iter().enumerate() {
            assert!(a < b, "empty segment {i} for W={w} n={n}");
            if i > 0 {
                assert!(a > r[i - 1].0, "starts not strictly increasing");
                assert!(b > r[i - 1].1, "ends not strictly increasing");
                assert!(a <= r[i - 1].1, "gap before segment {i} for W={w} n={n}");
                // Overlap stays within one word of f*L (final segment may
                // absorb a remainder and is excluded).
                if i < n - 1 {
                    let ov = r[i - 1].1 as f64 - a as f64;
                    assert!(
                        (ov - f * len).abs() <= 1.0 + 1e-9,
                        "overlap {ov} vs {} for W={w} n={n} i={i}",
                        f * len
                    );
                }
            }
            covered = covered.max(b);
        }
        assert_eq!(covered, w);
    }

    #[test]
    fn coverage_across_sweep_counts() {
        for n in [6usize, 10, 14, 18] {
            for w in (2 * n)..(2 * n + 120) {
                assert_invariants(w, n, 0.2);
            }
        }
    }

    #[test]
    fn coverage_zero_and_high_overlap() {
        for w in [12usize, 47, 100, 355] {
            assert_invariants(w, 6, 0.0);
            if w >= 40 {
                assert_invariants(w, 10, 0.5);
            }
        }
    }
}
