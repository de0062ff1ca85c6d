use super::{EmbeddingVector, EncoderProvider};
use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
///
/// Each token adds ±1 to bucket `fnv1a64(token) % dim`; the sign is `+` when
/// bit 63 of `fnv1a64("s" + token)` is set. A text whose contributions cancel
/// (or that has no tokens) maps to the zero vector.
///
/// Panics if `dim` is zero.
pub fn stub_encode(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim > 0, "embedding dim must be positive");
    let mut acc = vec![0.0f64; dim];
    let lower = text.to_lowercase();
    for token in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let bucket = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
        let signed = fnv1a64(format!("s{token}").as_bytes());
        acc[bucket] += if signed >> 63 == 1 { 1.0 } else { -1.0 };
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector(acc)
}

#[derive(Debug, Clone, Copy)]
pub struct StubEncoder {
    dim: usize,
}

impl StubEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        StubEncoder { dim }
    }
}

impl EncoderProvider for StubEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| stub_encode(t, self.dim)).collect())
    }
}
