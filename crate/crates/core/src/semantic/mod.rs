//! Semantic units, caption trees and the binary semantic space.

mod schema;
mod tree;
mod unit;
mod vector;

use thiserror::Error;

pub use schema::{from_json, to_json, to_json_pretty, to_json_value, units_from_json};
pub use tree::{build_tree, unit_count, AttributeEdge, ObjectNode, SemanticUnitTree, ROOT_LABEL};
pub use unit::{normalize_object_name, normalize_value, AttributeKind, SemanticUnit, UnitId, EXISTENCE_VALUE};
pub use vector::{to_vector, SemanticVector, Vocabulary};

use crate::dedup::{DuplicationMatcher, MatchError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticError {
    #[error("semantic unit has an empty object name")]
    EmptyObjectName,
    #[error("semantic unit for {object_name:?} has an empty value")]
    EmptyValue { object_name: String },
    #[error("unit {0} is not in the vocabulary")]
    UnknownUnit(UnitId),
    #[error("malformed unit tree: {0}")]
    Malformed(String),
}

/// Units of `current` that match nothing in `previous`.
pub fn residual(
    previous: &SemanticUnitTree,
    current: &SemanticUnitTree,
    matcher: &DuplicationMatcher,
) -> Result<Vec<SemanticUnit>, MatchError> {
    let earlier = previous.units();
    let later = current.units();
    let matching = matcher.match_units(&earlier, &later)?;
    let mut matched = vec![false; later.len()];
    for &(_, j) in matching.pairs() {
        matched[j] = true;
    }
    Ok(later
        .into_iter()
        .zip(matched)
        .filter_map(|(unit, hit)| (!hit).then_some(unit))
        .collect())
}
