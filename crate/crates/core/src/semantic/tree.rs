use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::unit::{AttributeKind, SemanticUnit, UnitId, EXISTENCE_VALUE};

/// Label of the virtual root node standing for the whole image.
pub const ROOT_LABEL: &str = "Image";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeEdge {
    pub kind: AttributeKind,
    pub value: String,
    pub source_round: u32,
}

/// An object under the image root.
///
/// A node with no edges is a bare object and counts as one implicit
/// existence unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub name: String,
    /// Earliest round in which the object was mentioned.
    pub source_round: u32,
    pub attributes: Vec<AttributeEdge>,
}

impl ObjectNode {
    pub fn unit_count(&self) -> usize {
        self.attributes.len().max(1)
    }
}

/// Three-level caption tree: image root, objects, attribute edges.
///
/// Always held in canonical form: objects sorted by name, edges sorted by
/// `(kind, value)`, no duplicate edge under one object, and an object whose
/// only edge would be the explicit existence edge stored bare.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemanticUnitTree {
    objects: Vec<ObjectNode>,
}

impl SemanticUnitTree {
    pub fn empty() -> Self {
        SemanticUnitTree::default()
    }

    /// Builds a tree from raw `(name, [(kind, value)])` object descriptions.
    /// Entries are normalized the same way units are; unusable entries are dropped.
    pub fn from_objects<I, A>(objects: I, source_round: u32) -> Self
    where
        I: IntoIterator<Item = (String, A)>,
        A: IntoIterator<Item = (AttributeKind, String)>,
    {
        let mut units = Vec::new();
        for (name, attributes) in objects {
            let Ok(existence) = SemanticUnit::existence(&name, source_round) else {
                continue;
            };
            let mut any = false;
            for (kind, value) in attributes {
                if let Ok(unit) = SemanticUnit::new(&name, kind, &value, source_round) {
                    units.push(unit);
                    any = true;
                }
            }
            if !any {
                units.push(existence);
            }
        }
        build_tree(&units)
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn root_label(&self) -> &'static str {
        ROOT_LABEL
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn unit_count(&self) -> usize {
        unit_count(self)
    }

    /// All units in canonical order, including implicit existence units of bare objects.
    pub fn units(&self) -> Vec<SemanticUnit> {
        let mut out = Vec::with_capacity(self.unit_count());
        for object in &self.objects {
            if object.attributes.is_empty() {
                out.push(SemanticUnit {
                    object_name: object.name.clone(),
                    kind: AttributeKind::ObjectDescription,
                    value: EXISTENCE_VALUE.to_string(),
                    source_round: object.source_round,
                });
            }
            for edge in &object.attributes {
                out.push(SemanticUnit {
                    object_name: object.name.clone(),
                    kind: edge.kind,
                    value: edge.value.clone(),
                    source_round: edge.source_round,
                });
            }
        }
        out
    }

    pub fn unit_ids(&self) -> Vec<UnitId> {
        self.units().iter().map(SemanticUnit::id).collect()
    }

    pub fn contains(&self, id: &UnitId) -> bool {
        let Ok(index) = self.objects.binary_search_by(|o| o.name.as_str().cmp(&id.object_name)) else {
            return false;
        };
        let object = &self.objects[index];
        if object.attributes.is_empty() {
            return id.is_existence();
        }
        object
            .attributes
            .iter()
            .any(|e| e.kind == id.kind && e.value == id.value)
    }

    /// Union of two trees at the unit level.
    pub fn union(&self, other: &SemanticUnitTree) -> SemanticUnitTree {
        let mut units = self.units();
        units.extend(other.units());
        build_tree(&units)
    }
}

/// Groups units by object, collapsing duplicate identities. Order-independent.
pub fn build_tree(units: &[SemanticUnit]) -> SemanticUnitTree {
    // name -> (first round, (kind, value) -> first round)
    let mut grouped: BTreeMap<&str, (u32, BTreeMap<(AttributeKind, &str), u32>)> = BTreeMap::new();
    for unit in units {
        let entry = grouped
            .entry(unit.object_name.as_str())
            .or_insert((unit.source_round, BTreeMap::new()));
        entry.0 = entry.0.min(unit.source_round);
        let round = entry
            .1
            .entry((unit.kind, unit.value.as_str()))
            .or_insert(unit.source_round);
        *round = (*round).min(unit.source_round);
    }

    let objects = grouped
        .into_iter()
        .map(|(name, (source_round, edges))| {
            let only_existence = edges.len() == 1
                && edges
                    .keys()
                    .all(|(kind, value)| *kind == AttributeKind::ObjectDescription && *value == EXISTENCE_VALUE);
            let attributes = if only_existence {
                Vec::new()
            } else {
                edges
                    .into_iter()
                    .map(|((kind, value), round)| AttributeEdge {
                        kind,
                        value: value.to_string(),
                        source_round: round,
                    })
                    .collect()
            };
            ObjectNode { name: name.to_string(), source_round, attributes }
        })
        .collect();
    SemanticUnitTree { objects }
}

/// Edges below the object level, plus one implicit existence edge per bare object.
pub fn unit_count(tree: &SemanticUnitTree) -> usize {
    tree.objects.iter().map(ObjectNode::unit_count).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(name: &str, kind: AttributeKind, value: &str) -> SemanticUnit {
        SemanticUnit::new(name, kind, value, 1).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_tree() {
        let tree = build_tree(&[]);
        assert!(tree.is_empty());
        assert_eq!(unit_count(&tree), 0);
    }

    #[test]
    fn terminal_with_five_attributes_has_five_units() {
        let units = vec![
            unit("terminal", AttributeKind::Colour, "white"),
            unit("terminal", AttributeKind::Shape, "curved"),
            unit("terminal", AttributeKind::Size, "large"),
            unit("terminal", AttributeKind::AbsoluteLocation, "in the center"),
            unit("terminal", AttributeKind::Material, "glass"),
        ];
        let tree = build_tree(&units);
        assert_eq!(tree.objects().len(), 1);
        assert_eq!(unit_count(&tree), 5);
    }

    #[test]
    fn duplicates_collapse() {
        let units = vec![
            unit("car", AttributeKind::Colour, "black"),
            unit("car", AttributeKind::Colour, "black"),
            unit("road", AttributeKind::Amount, "two"),
        ];
        let tree = build_tree(&units);
        assert_eq!(tree.objects().len(), 2);
        assert_eq!(unit_count(&tree), 2);
    }

    #[test]
    fn bare_objects_count_once() {
        let tree = SemanticUnitTree::from_objects(
            vec![
                ("boat".to_string(), vec![(AttributeKind::Colour, "red".to_string()), (AttributeKind::Size, "small".to_string())]),
                ("pier".to_string(), vec![]),
                ("sea".to_string(), vec![(AttributeKind::Colour, "blue".to_string())]),
            ],
            1,
        );
        assert_eq!(unit_count(&tree), 4);
        assert!(tree.contains(&SemanticUnit::existence("pier", 1).unwrap().id()));
        assert!(!tree.contains(&SemanticUnit::existence("boat", 1).unwrap().id()));
    }

    #[test]
    fn existence_alongside_attributes_stays_an_edge() {
        let units = vec![
            SemanticUnit::existence("car", 1).unwrap(),
            unit("car", AttributeKind::Colour, "black"),
        ];
        let tree = build_tree(&units);
        assert_eq!(unit_count(&tree), 2);
        assert_eq!(build_tree(&tree.units()), tree);
    }

    #[test]
    fn earliest_round_is_kept() {
        let mut late = unit("car", AttributeKind::Colour, "black");
        late.source_round = 3;
        let mut early = late.clone();
        early.source_round = 2;
        let a = build_tree(&[late.clone(), early.clone()]);
        let b = build_tree(&[early, late]);
        assert_eq!(a, b);
        assert_eq!(a.objects()[0].attributes[0].source_round, 2);
    }
}
