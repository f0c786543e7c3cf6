use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

/// Failure reported by an embedding backend.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transient embedding failure: {0}")]
    Transient(String),
    #[error("embedding failure: {0}")]
    Fatal(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

/// Text in, fixed-length vector out. Implementations must tolerate
/// concurrent calls and may batch internally.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic feature-hashing embedding over words and character
/// trigrams. Strings sharing most of their words land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dimensions: usize,
}

impl HashEmbedding {
    pub fn new(dimensions: usize) -> Self {
        assert!(dimensions > 0, "embedding needs at least one dimension");
        HashEmbedding { dimensions }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut out = vec![0f32; self.dimensions];
        let lowered = text.to_lowercase();
        let mut add = |feature: &str, weight: f32| {
            let h = fnv1a(feature.as_bytes());
            let slot = (h % self.dimensions as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            out[slot] += sign * weight;
        };
        for word in lowered.split_whitespace() {
            add(&format!("w:{word}"), 2.0);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for gram in padded.windows(3) {
                add(&format!("g:{}", gram.iter().collect::<String>()), 1.0);
            }
        }
        out
    }
}

impl Default for HashEmbedding {
    fn default() -> Self {
        HashEmbedding::new(256)
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Client for an OpenAI-compatible `POST {endpoint}/embeddings` service.
pub struct HttpEmbedding {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

pub const EMBED_ENDPOINT_ENV: &str = "COTALK_EMBED_ENDPOINT";
pub const EMBED_MODEL_ENV: &str = "COTALK_EMBED_MODEL";
pub const EMBED_KEY_ENV: &str = "COTALK_EMBED_API_KEY";

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f32>,
}

impl HttpEmbedding {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        HttpEmbedding {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    /// Reads endpoint, model and key from the environment.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(EMBED_ENDPOINT_ENV).ok()?;
        let model = std::env::var(EMBED_MODEL_ENV).unwrap_or_else(|_| "all-MiniLM-L6-v2".to_string());
        Some(HttpEmbedding::new(endpoint, model, std::env::var(EMBED_KEY_ENV).ok()))
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let mut request = self
            .client
            .post(format!("{}/embeddings", self.endpoint))
            .json(&serde_json::json!({ "model": self.model, "input": texts }));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("status {status}")));
        }
        let mut reply: EmbeddingReply = response.json().map_err(|e| ProviderError::Fatal(e.to_string()))?;
        if reply.data.len() != texts.len() {
            return Err(ProviderError::Fatal(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                reply.data.len()
            )));
        }
        reply.data.sort_by_key(|item| item.index);
        Ok(reply.data.into_iter().map(|item| item.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedding_is_deterministic() {
        let provider = HashEmbedding::default();
        let texts = vec!["black car".to_string(), "black car".to_string()];
        let vectors = provider.embed(&texts).unwrap();
        assert_eq!(vectors[0], vectors[1]);
        assert!((cosine(&vectors[0], &vectors[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn related_phrases_score_higher_than_unrelated() {
        let provider = HashEmbedding::default();
        let texts: Vec<String> = ["car colour black", "car colour dark black", "tree amount two"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let v = provider.embed(&texts).unwrap();
        assert!(cosine(&v[0], &v[1]) > cosine(&v[0], &v[2]));
    }

    #[test]
    fn cosine_handles_zero_vectors() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
    }
}
