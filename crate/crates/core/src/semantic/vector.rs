use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tree::SemanticUnitTree;
use super::unit::UnitId;
use super::SemanticError;

/// Open, insertion-ordered list of unit identities; one dimension per entry.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: Vec<UnitId>,
    index: HashMap<UnitId, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    pub fn from_tree(tree: &SemanticUnitTree) -> Self {
        let mut vocabulary = Vocabulary::new();
        vocabulary.extend_from_tree(tree);
        vocabulary
    }

    /// Returns the dimension of `id`, appending it if new.
    pub fn insert(&mut self, id: UnitId) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.entries.len();
        self.index.insert(id.clone(), i);
        self.entries.push(id);
        i
    }

    pub fn extend_from_tree(&mut self, tree: &SemanticUnitTree) {
        for id in tree.unit_ids() {
            self.insert(id);
        }
    }

    pub fn position(&self, id: &UnitId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entries(&self) -> &[UnitId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Binary presence vector of a tree over a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticVector {
    bits: Vec<bool>,
}

impl SemanticVector {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Per-dimension `self - reference` in {-1, 0, 1}.
    pub fn difference(&self, reference: &SemanticVector) -> Vec<i8> {
        self.bits
            .iter()
            .zip(&reference.bits)
            .map(|(&y, &x)| y as i8 - x as i8)
            .collect()
    }
}

impl std::fmt::Display for SemanticVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &bit in &self.bits {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Maps a tree into the binary semantic space spanned by `vocabulary`.
pub fn to_vector(tree: &SemanticUnitTree, vocabulary: &Vocabulary) -> Result<SemanticVector, SemanticError> {
    let mut bits = vec![false; vocabulary.len()];
    for id in tree.unit_ids() {
        match vocabulary.position(&id) {
            Some(i) => bits[i] = true,
            None => return Err(SemanticError::UnknownUnit(id)),
        }
    }
    Ok(SemanticVector { bits })
}
