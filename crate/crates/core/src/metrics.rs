//! Intrinsic caption metrics, the quality objective and efficiency.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantic::SemanticUnitTree;

/// Shannon's estimate of the information carried by one English word.
pub const BITS_PER_WORD: f64 = 11.82;

// Hundredths of a bit per word, so that `words * 1182 / 100` rounds once.
const CENTIBITS_PER_WORD: u64 = 1182;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("total time must be positive, got {0}")]
    ZeroTime(f64),
    #[error("no reference tree: sufficiency cannot be scored")]
    MissingReference,
    #[error("weight {name} must be finite and non-negative, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Entropy proxy in bits: whitespace-delimited words times 11.82.
pub fn entropy_proxy(text: &str) -> f64 {
    entropy_of_words(word_count(text))
}

pub fn entropy_of_words(words: usize) -> f64 {
    (words as u64 * CENTIBITS_PER_WORD) as f64 / 100.0
}

/// Scores how far a caption sits from natural language. Larger is worse.
pub trait IntelligibilityScorer: Send + Sync {
    fn penalty(&self, caption: &str) -> f64;
}

/// The same penalty for every caption.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstantScorer(pub f64);

impl IntelligibilityScorer for ConstantScorer {
    fn penalty(&self, _caption: &str) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights { beta: 0.0, gamma: 0.0 }
    }
}

impl QualityWeights {
    pub fn new(beta: f64, gamma: f64) -> Result<Self, MetricsError> {
        for (name, value) in [("beta", beta), ("gamma", gamma)] {
            if !value.is_finite() || value < 0.0 {
                return Err(MetricsError::InvalidWeight { name, value });
            }
        }
        Ok(QualityWeights { beta, gamma })
    }
}

/// Weights plus the pluggable intelligibility scorer.
#[derive(Clone)]
pub struct QualityObjective {
    pub weights: QualityWeights,
    scorer: Arc<dyn IntelligibilityScorer>,
}

impl fmt::Debug for QualityObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QualityObjective").field("weights", &self.weights).finish()
    }
}

impl Default for QualityObjective {
    fn default() -> Self {
        QualityObjective::new(QualityWeights::default())
    }
}

/// The three terms and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub j_suf: f64,
    pub j_min_penalty: f64,
    pub j_int_penalty: f64,
    pub j: f64,
}

impl QualityObjective {
    pub fn new(weights: QualityWeights) -> Self {
        QualityObjective { weights, scorer: Arc::new(ConstantScorer(0.0)) }
    }

    pub fn with_scorer(mut self, scorer: Arc<dyn IntelligibilityScorer>) -> Self {
        self.scorer = scorer;
        self
    }

    /// Scores a merged caption against ground truth. `j_suf` counts merged
    /// units whose identity also appears in the reference.
    pub fn score(
        &self,
        merged: &SemanticUnitTree,
        reference: Option<&SemanticUnitTree>,
        caption: &str,
    ) -> Result<QualityScore, MetricsError> {
        let reference = reference.ok_or(MetricsError::MissingReference)?;
        let covered = merged.unit_ids().iter().filter(|id| reference.contains(id)).count();
        Ok(self.combine(covered as f64, entropy_proxy(caption), self.scorer.penalty(caption)))
    }

    /// Combines already measured terms.
    pub fn combine(&self, j_suf: f64, j_min_penalty: f64, j_int_penalty: f64) -> QualityScore {
        let j = j_suf - self.weights.beta * j_min_penalty - self.weights.gamma * j_int_penalty;
        QualityScore { j_suf, j_min_penalty, j_int_penalty, j }
    }

    pub fn intelligibility(&self, caption: &str) -> f64 {
        self.scorer.penalty(caption)
    }
}

/// Quality per second.
pub fn efficiency(j: f64, total_time_s: f64) -> Result<f64, MetricsError> {
    if !(total_time_s > 0.0) || !total_time_s.is_finite() {
        return Err(MetricsError::ZeroTime(total_time_s));
    }
    Ok(j / total_time_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub unit_count: usize,
    pub total_time_s: f64,
    /// Units per second; absent when no time was recorded.
    pub speed: Option<f64>,
    pub duplication_pct: f64,
}

impl IntrinsicReport {
    pub fn new(unit_count: usize, total_time_s: f64, duplication_pct: f64) -> Self {
        let speed = if total_time_s > 0.0 {
            Some(unit_count as f64 / total_time_s)
        } else {
            None
        };
        IntrinsicReport { unit_count, total_time_s, speed, duplication_pct }
    }
}

/// One row of the metrics CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub session_id: String,
    pub mode: String,
    pub unit_count: usize,
    pub total_time_s: f64,
    pub speed_units_per_s: Option<f64>,
    pub duplication_pct: f64,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    #[serde(rename = "E")]
    pub e: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{build_tree, AttributeKind, SemanticUnit};

    #[test]
    fn entropy_proxy_counts_words() {
        assert_eq!(entropy_proxy(""), 0.0);
        assert_eq!(entropy_proxy("  black car parked \n"), 35.46);
        assert_eq!(entropy_of_words(100), 1182.0);
    }

    #[test]
    fn efficiency_rejects_non_positive_time() {
        assert_eq!(efficiency(30.0, 100.0).unwrap(), 0.3);
        assert_eq!(efficiency(0.0, 5.0).unwrap(), 0.0);
        assert!(matches!(efficiency(1.0, 0.0), Err(MetricsError::ZeroTime(_))));
        assert!(matches!(efficiency(1.0, f64::NAN), Err(MetricsError::ZeroTime(_))));
    }

    #[test]
    fn speed_is_absent_without_time() {
        assert_eq!(IntrinsicReport::new(10, 25.0, 0.0).speed, Some(0.4));
        assert_eq!(IntrinsicReport::new(0, 12.0, 0.0).speed, Some(0.0));
        assert_eq!(IntrinsicReport::new(3, 0.0, 0.0).speed, None);
    }

    #[test]
    fn quality_needs_a_reference() {
        let tree = build_tree(&[SemanticUnit::new("car", AttributeKind::Colour, "black", 1).unwrap()]);
        let objective = QualityObjective::default();
        assert_eq!(objective.score(&tree, None, "a black car"), Err(MetricsError::MissingReference));
        let score = objective.score(&tree, Some(&tree), "a black car").unwrap();
        assert_eq!(score.j, 1.0);
    }

    #[test]
    fn weights_must_be_non_negative() {
        assert!(QualityWeights::new(-0.1, 0.0).is_err());
        assert!(QualityWeights::new(0.0, f64::INFINITY).is_err());
    }
}
