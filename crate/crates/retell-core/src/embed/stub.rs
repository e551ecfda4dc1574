//! Deterministic offline embedding stub.
//!
//! Each word is hashed (with the seed) to a pseudo-random unit vector; the
//! text's embedding is the sum of its word vectors. The result depends only
//! on the word multiset, so texts sharing more words correlate higher and
//! order changes leave the vector untouched. That is enough to exercise
//! every downstream metric's sensitivity without any model runtime.

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingBackend, EmbeddingVector};

/// Bag-of-words embedding of `text`, stable across platforms and runs.
pub fn stub_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "stub_embed requires dim >= 2");
    // Sum in sorted word order: float addition is order-sensitive, and
    // equal word multisets must produce bit-identical vectors.
    let mut words: Vec<&str> = text.split_whitespace().collect();
    words.sort_unstable();
    let mut acc = vec![0.0f64; dim];
    for word in words {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0u8]);
        hasher.update(word.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x;
        }
    }
    EmbeddingVector::new(acc).expect("word vectors sum to a finite non-zero vector")
}

/// [`EmbeddingBackend`] over [`stub_embed`].
pub struct StubBackend {
    dim: usize,
    seed: u64,
}

impl StubBackend {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl EmbeddingBackend for StubBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(crate::exec::map(texts, |t| stub_embed(t, self.dim, self.seed)))
    }
}
