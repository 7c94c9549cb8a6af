use super::{Embedder, EmbeddingVector, GatewayError};
use crate::text;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Deterministic bag-of-tokens embedder.
///
/// Text is normalized, split on whitespace, and each token adds 1.0 to bucket
/// `fnv1a64(token) % dimension`. The count vector is L2-normalized in `f64`
/// and each component rounded to `f32`. Text without tokens maps to zeros.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dimension: usize,
}

impl LocalHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        LocalHashEmbedder { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.dimension];
        for tok in text::normalize(text).split_whitespace() {
            counts[self.bucket(tok)] += 1.0;
        }
        counts
    }
}

impl Embedder for LocalHashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let counts = self.counts(text);
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(EmbeddingVector::zeros(self.dimension));
        }
        EmbeddingVector::new(counts.iter().map(|c| (c / norm) as f32).collect())
    }
}
