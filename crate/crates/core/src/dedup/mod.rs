//! Duplication between annotation rounds.
//!
//! Units are paired one-to-one. A pair is admissible when the identities are
//! equal or, in embedding mode, when the cosine similarity of the rendered
//! "object kind value" phrases reaches the threshold. Among all maximum
//! matchings the one with the largest total similarity is chosen, ties going
//! to the lexicographically smallest pair list.

pub mod assignment;
mod embedding;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    cosine, EmbeddingProvider, HashEmbedding, HttpEmbedding, ProviderError, EMBED_ENDPOINT_ENV,
    EMBED_KEY_ENV, EMBED_MODEL_ENV,
};

use crate::retry::RetryPolicy;
use crate::semantic::{SemanticUnit, SemanticUnitTree, UnitId};
use assignment::{max_weight_matching, MAX_WEIGHT};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("embedding provider unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("embedding provider returned {got} vectors for {expected} texts")]
    ProviderShape { expected: usize, got: usize },
    #[error("similarity threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("embedding mode needs a provider")]
    MissingProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Embedding,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Exact => "exact",
            MatchMode::Embedding => "embedding",
        })
    }
}

/// Decides which units of two rounds count as the same information.
#[derive(Clone)]
pub struct DuplicationMatcher {
    mode: MatchMode,
    similarity_threshold: f64,
    provider: Option<Arc<dyn EmbeddingProvider>>,
    retry: RetryPolicy,
}

impl fmt::Debug for DuplicationMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DuplicationMatcher")
            .field("mode", &self.mode)
            .field("similarity_threshold", &self.similarity_threshold)
            .finish()
    }
}

impl Default for DuplicationMatcher {
    fn default() -> Self {
        DuplicationMatcher::exact()
    }
}

impl DuplicationMatcher {
    pub fn exact() -> Self {
        DuplicationMatcher {
            mode: MatchMode::Exact,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            provider: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn embedding(provider: Arc<dyn EmbeddingProvider>) -> Self {
        DuplicationMatcher {
            mode: MatchMode::Embedding,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            provider: Some(provider),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, MatchError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(MatchError::InvalidThreshold(threshold));
        }
        self.similarity_threshold = threshold;
        Ok(self)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn similarity_threshold(&self) -> f64 {
        self.similarity_threshold
    }

    /// Optimal one-to-one matching between `a` and `b`, pairs as `(index_in_a, index_in_b)`.
    pub fn match_units(&self, a: &[SemanticUnit], b: &[SemanticUnit]) -> Result<Matching, MatchError> {
        if a.is_empty() || b.is_empty() {
            return Ok(Matching::default());
        }
        match self.mode {
            MatchMode::Exact => Ok(exact_matching(a, b)),
            MatchMode::Embedding => {
                let similarity = self.similarities(a, b)?;
                let threshold = self.similarity_threshold;
                let pairs = max_weight_matching(a.len(), b.len(), |i, j| {
                    let s = similarity[i][j];
                    (s >= threshold).then(|| scale(s))
                });
                let similarities = pairs.iter().map(|&(i, j)| similarity[i][j]).collect();
                Ok(Matching { pairs, similarities })
            }
        }
    }

    /// Similarity matrix; equal identities are pinned to 1.
    fn similarities(&self, a: &[SemanticUnit], b: &[SemanticUnit]) -> Result<Vec<Vec<f64>>, MatchError> {
        let provider = self.provider.as_ref().ok_or(MatchError::MissingProvider)?;
        let mut texts: Vec<String> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        let mut index_of = |unit: &SemanticUnit| {
            let text = unit.render();
            *slot.entry(text.clone()).or_insert_with(|| {
                texts.push(text);
                texts.len() - 1
            })
        };
        let a_idx: Vec<usize> = a.iter().map(&mut index_of).collect();
        let b_idx: Vec<usize> = b.iter().map(&mut index_of).collect();

        let vectors = self
            .retry
            .run(ProviderError::is_transient, |_| provider.embed(&texts))
            .map_err(|e| MatchError::ProviderUnavailable { attempts: e.attempts, message: e.error.to_string() })?;
        if vectors.len() != texts.len() {
            return Err(MatchError::ProviderShape { expected: texts.len(), got: vectors.len() });
        }

        Ok(a.iter()
            .zip(&a_idx)
            .map(|(ua, &ia)| {
                b.iter()
                    .zip(&b_idx)
                    .map(|(ub, &ib)| {
                        if ua.id() == ub.id() {
                            1.0
                        } else {
                            cosine(&vectors[ia], &vectors[ib])
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

fn scale(similarity: f64) -> i64 {
    (similarity.clamp(0.0, 1.0) * MAX_WEIGHT as f64).round() as i64
}

/// Equal identities only: each unit of `a` takes the first unused equal unit of `b`.
fn exact_matching(a: &[SemanticUnit], b: &[SemanticUnit]) -> Matching {
    let mut pending: HashMap<UnitId, std::collections::VecDeque<usize>> = HashMap::new();
    for (j, unit) in b.iter().enumerate() {
        pending.entry(unit.id()).or_default().push_back(j);
    }
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .enumerate()
        .filter_map(|(i, unit)| pending.get_mut(&unit.id()).and_then(|q| q.pop_front()).map(|j| (i, j)))
        .collect();
    let similarities = vec![1.0; pairs.len()];
    Matching { pairs, similarities }
}

/// Result of [`DuplicationMatcher::match_units`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
    similarities: Vec<f64>,
}

impl Matching {
    /// Pairs sorted by the index into the first list.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn similarities(&self) -> &[f64] {
        &self.similarities
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_similarity(&self) -> f64 {
        self.similarities.iter().sum()
    }
}

/// Percentage of `later`'s units matched to a unit of `earlier`; 0 when `later` is empty.
pub fn duplication_rate(
    earlier: &SemanticUnitTree,
    later: &SemanticUnitTree,
    matcher: &DuplicationMatcher,
) -> Result<f64, MatchError> {
    duplication_rate_of_units(&earlier.units(), &later.units(), matcher)
}

pub fn duplication_rate_of_units(
    earlier: &[SemanticUnit],
    later: &[SemanticUnit],
    matcher: &DuplicationMatcher,
) -> Result<f64, MatchError> {
    if later.is_empty() {
        return Ok(0.0);
    }
    let matched = matcher.match_units(earlier, later)?.len();
    Ok(100.0 * matched as f64 / later.len() as f64)
}
