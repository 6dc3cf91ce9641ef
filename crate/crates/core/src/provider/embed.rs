use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::ProviderError;

/// A dense embedding. Not required to be unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError>;
}

/// Case-folded alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic hashed set-of-tokens embedder for tests and offline runs.
/// Shared tokens raise cosine similarity; disjoint token sets score zero
/// unless their hashes collide. Repeated tokens count once.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Vector {
        let mut v = vec![0.0; self.dim];
        let tokens: std::collections::BTreeSet<String> = tokenize(text).collect();
        for token in tokens {
            v[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        Vector(v)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Memoizes another embedder; missing texts are embedded in one batch.
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: Mutex<HashMap<String, Vector>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("embedding cache poisoned").len()
    }
}

impl Embedder for CachedEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        let mut missing: Vec<&str> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t))
                .collect()
        };
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            if fresh.len() != missing.len() || fresh.iter().any(|v| v.dim() != self.inner.dim()) {
                return Err(ProviderError::Embedding(
                    "backend returned a malformed batch".into(),
                ));
            }
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (text, vector) in missing.into_iter().zip(fresh) {
                cache.insert(text.to_string(), vector);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}
