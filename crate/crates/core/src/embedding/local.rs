use super::{Embedder, EmbeddingVector, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::text::fnv1a64;

/// Deterministic signed feature-hashing embedder.
///
/// Tokens are lowercase alphanumeric runs. Each token with FNV-1a hash `h`
/// adds +1 (bit 63 set) or -1 (clear) to component `h mod dim`; the sum is
/// L2-normalized.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dim: usize,
    tag: String,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        LocalEmbedder::new(DEFAULT_DIM).expect("default dim is positive")
    }
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        Ok(LocalEmbedder {
            dim,
            tag: format!("local-fnv1a-{dim}"),
        })
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut acc = vec![0f32; self.dim];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            acc[slot] += if h >> 63 == 1 { 1.0 } else { -1.0 };
        }
        EmbeddingVector::normalized(acc)
    }
}

pub(crate) fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for LocalEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }

    fn batch_size(&self) -> usize {
        256
    }

    fn parallelism(&self) -> usize {
        rayon::current_num_threads()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts_scale_magnitude_only() {
        let e = LocalEmbedder::default();
        assert_eq!(e.embed_one("a a").unwrap(), e.embed_one("a").unwrap());
    }

    #[test]
    fn unit_norm_at_declared_dim() {
        let e = LocalEmbedder::new(256).unwrap();
        let v = e.embed_one("The quick brown fox").unwrap();
        assert_eq!(v.dim(), 256);
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn case_and_punctuation_ignored() {
        let e = LocalEmbedder::default();
        assert_eq!(
            e.embed_one("Hello, World!").unwrap(),
            e.embed_one("hello world").unwrap()
        );
    }

    #[test]
    fn tokenless_text_is_zero_norm() {
        assert!(matches!(LocalEmbedder::default().embed_one("?!"), Err(Error::ZeroNorm)));
    }
}
