//! Shared helpers for the integration suites: independent oracles kept
//! deliberately separate from the implementation paths they check.

use rand::Rng;

/// Brute-force Spearman: O(n^2) counting ranks plus the direct product-sum
/// Pearson formula. Shares no code with the engine's sort-based path.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn counting_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let rx = counting_ranks(x);
    let ry = counting_ranks(y);
    let n = x.len() as f64;
    let sx: f64 = rx.iter().sum();
    let sy: f64 = ry.iter().sum();
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|a| a * a).sum();
    let num = n * sxy - sx * sy;
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    num / den
}

/// Random vector of `len` values; with `ties`, values collide often.
pub fn random_vector<R: Rng>(rng: &mut R, len: usize, ties: bool) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if ties {
                rng.gen_range(0..5) as f64
            } else {
                rng.gen_range(-100.0..100.0)
            }
        })
        .collect()
}

/// A vector with rank variance on both sides (oracle denominator > 0).
pub fn has_rank_variance(v: &[f64]) -> bool {
    v.iter().any(|&a| a != v[0])
}
