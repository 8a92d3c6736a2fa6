//! Prompt embeddings.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::StoreError;

/// Allowed deviation of an embedding's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// L2-normalised embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalises `raw`. Fails on an empty or all-zero vector.
    pub fn normalize(raw: Vec<f64>) -> Result<Self, StoreError> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if raw.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(StoreError::InvalidEmbedding("zero or non-finite vector".into()));
        }
        Ok(Self(raw.into_iter().map(|x| x / norm).collect()))
    }

    /// Wraps an already-normalised vector, checking the norm.
    pub fn from_normalized(vector: Vec<f64>) -> Result<Self, StoreError> {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vector.is_empty() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(StoreError::InvalidEmbedding(format!(
                "norm {norm} is not 1"
            )));
        }
        Ok(Self(vector))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
}

/// Maps prompts to embeddings. Implementations must be deterministic for a
/// fixed configuration.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, StoreError>;

    fn dim(&self) -> usize;

    /// Configuration recorded in the cache file header; a restored cache is
    /// only usable with an embedder reporting the same descriptor.
    fn descriptor(&self) -> Value;
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Hashed character-trigram term-frequency embedder.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl TrigramEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, StoreError> {
        if text.trim().is_empty() {
            return Err(StoreError::EmptyPrompt);
        }
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut counts = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for ch in window {
                len += ch.encode_utf8(&mut buf[len..]).len();
            }
            counts[(fnv1a(&buf[..len]) % self.dim as u64) as usize] += 1.0;
        }
        Embedding::normalize(counts)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn descriptor(&self) -> Value {
        json!({ "kind": "char_trigram_tf", "hash": "fnv1a64", "dim": self.dim })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalised() {
        let e = TrigramEmbedder::default();
        let a = e.embed("Solve 2x + 3 = 13 for x").unwrap();
        let b = e.embed("Solve 2x + 3 = 13 for x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 256);
        let norm: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < NORM_TOLERANCE);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paraphrase_is_closer_than_unrelated_prompt() {
        let e = TrigramEmbedder::default();
        let base = e.embed("Solve 2x + 3 = 13 for x").unwrap();
        let para = e.embed("Could you solve 2x + 3 = 13 for x?").unwrap();
        let other = e.embed("Return a JSON object with keys a, b").unwrap();
        let (near, far) = (base.cosine(&para), base.cosine(&other));
        assert!(near > far, "{near} <= {far}");
    }

    #[test]
    fn whitespace_and_case_insensitive() {
        let e = TrigramEmbedder::default();
        assert_eq!(e.embed("Solve  X").unwrap(), e.embed("solve x").unwrap());
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(TrigramEmbedder::default().embed("   "), Err(StoreError::EmptyPrompt)));
    }

    #[test]
    fn cosine_is_symmetric_and_bounded() {
        let x = [0.3, -0.2, 0.9];
        let y = [-0.5, 0.1, 0.4];
        assert_eq!(cosine(&x, &y), cosine(&y, &x));
        assert!((-1.0..=1.0).contains(&cosine(&x, &y)));
    }
}
