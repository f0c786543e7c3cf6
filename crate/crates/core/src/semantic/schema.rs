//! Object-list JSON form of a tree: `[{"name": ..., "attributes": {kind: value}}]`.
//!
//! This is the shape unit extraction replies use. Canonical output sorts
//! attribute keys, writes `other` as an array, and writes any other kind as a
//! string when it has one value and as an array otherwise.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use super::tree::{build_tree, SemanticUnitTree};
use super::unit::{AttributeKind, SemanticUnit};
use super::SemanticError;

#[derive(Serialize)]
struct ObjectJson<'a> {
    name: &'a str,
    attributes: BTreeMap<&'static str, Value>,
}

fn canonical_objects(tree: &SemanticUnitTree) -> Vec<ObjectJson<'_>> {
    tree.objects()
        .iter()
        .map(|object| {
            let mut grouped: BTreeMap<&'static str, Vec<&str>> = BTreeMap::new();
            for edge in &object.attributes {
                grouped.entry(edge.kind.label()).or_default().push(edge.value.as_str());
            }
            let attributes = grouped
                .into_iter()
                .map(|(label, values)| {
                    let value = if values.len() == 1 && label != AttributeKind::Other.label() {
                        Value::String(values[0].to_string())
                    } else {
                        Value::Array(values.into_iter().map(|v| Value::String(v.to_string())).collect())
                    };
                    (label, value)
                })
                .collect();
            ObjectJson { name: &object.name, attributes }
        })
        .collect()
}

/// Compact canonical JSON.
pub fn to_json(tree: &SemanticUnitTree) -> String {
    serde_json::to_string(&canonical_objects(tree)).expect("tree serialization is infallible")
}

pub fn to_json_pretty(tree: &SemanticUnitTree) -> String {
    serde_json::to_string_pretty(&canonical_objects(tree)).expect("tree serialization is infallible")
}

pub fn to_json_value(tree: &SemanticUnitTree) -> Value {
    serde_json::to_value(canonical_objects(tree)).expect("tree serialization is infallible")
}

pub fn from_json(text: &str, source_round: u32) -> Result<SemanticUnitTree, SemanticError> {
    let value: Value = serde_json::from_str(text).map_err(|e| SemanticError::Malformed(e.to_string()))?;
    Ok(build_tree(&units_from_json(&value, source_round)?))
}

fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Reads units from an object-list value. Unknown attribute keys become `other`;
/// string values under `other` may hold several comma-separated entries.
pub fn units_from_json(value: &Value, source_round: u32) -> Result<Vec<SemanticUnit>, SemanticError> {
    let objects = value
        .as_array()
        .ok_or_else(|| SemanticError::Malformed("expected a top-level array of objects".into()))?;
    let mut units = Vec::new();
    for (i, object) in objects.iter().enumerate() {
        let name = object
            .get("name")
            .and_then(scalar_text)
            .ok_or_else(|| SemanticError::Malformed(format!("object {i} has no \"name\"")))?;
        let before = units.len();
        match object.get("attributes") {
            None | Some(Value::Null) => {}
            Some(Value::Object(attributes)) => {
                for (key, raw) in attributes {
                    let kind = AttributeKind::from_label(key);
                    let mut values = Vec::new();
                    match raw {
                        Value::Array(items) => values.extend(items.iter().filter_map(scalar_text)),
                        Value::Null => {}
                        other => values.extend(scalar_text(other)),
                    }
                    for text in values {
                        let pieces: Vec<&str> = if kind == AttributeKind::Other {
                            text.split(',').collect()
                        } else {
                            vec![text.as_str()]
                        };
                        for piece in pieces {
                            match SemanticUnit::new(&name, kind, piece, source_round) {
                                Ok(unit) => units.push(unit),
                                Err(SemanticError::EmptyValue { .. }) => {}
                                Err(e) => return Err(e),
                            }
                        }
                    }
                }
            }
            Some(_) => {
                return Err(SemanticError::Malformed(format!(
                    "object {i} has non-object \"attributes\""
                )))
            }
        }
        if units.len() == before {
            units.push(SemanticUnit::existence(&name, source_round)?);
        }
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEA_EXAMPLE: &str = r#"[
        {"name": "sea surface", "attributes": {"colour": "green", "other": ["appears"]}},
        {"name": "seaweed", "attributes": {"amount": "a patch of", "colour": "green",
            "relative_location": "under the bridge in the upper right area", "other": ["visible"]}}
    ]"#;

    #[test]
    fn parses_worked_example() {
        let tree = from_json(SEA_EXAMPLE, 1).unwrap();
        let ids = tree.unit_ids();
        let has = |name: &str, kind, value: &str| {
            ids.iter().any(|id| id.object_name == name && id.kind == kind && id.value == value)
        };
        assert!(has("sea surface", AttributeKind::Colour, "green"));
        assert!(has("seaweed", AttributeKind::Amount, "a patch of"));
        assert_eq!(tree.unit_count(), 6);
    }

    #[test]
    fn canonical_form_round_trips_bit_exact() {
        let tree = from_json(SEA_EXAMPLE, 1).unwrap();
        let text = to_json(&tree);
        let again = from_json(&text, 1).unwrap();
        assert_eq!(again, tree);
        assert_eq!(to_json(&again), text);
    }

    #[test]
    fn bare_objects_serialize_with_empty_attributes() {
        let tree = from_json(r#"[{"name": "Road", "attributes": {}}, {"name": "car"}]"#, 1).unwrap();
        assert_eq!(tree.unit_count(), 2);
        assert_eq!(
            to_json(&tree),
            r#"[{"name":"car","attributes":{}},{"name":"road","attributes":{}}]"#
        );
    }

    #[test]
    fn unknown_keys_and_comma_lists_become_other() {
        let tree = from_json(
            r#"[{"name": "house", "attributes": {"texture": "rough", "other": "old, tall roof"}}]"#,
            1,
        )
        .unwrap();
        let values: Vec<String> = tree.units().into_iter().map(|u| format!("{}:{}", u.kind, u.value)).collect();
        assert_eq!(values, vec!["other:old", "other:rough", "other:tall roof"]);
    }

    #[test]
    fn missing_name_is_malformed() {
        assert!(matches!(from_json(r#"[{"attributes": {}}]"#, 1), Err(SemanticError::Malformed(_))));
        assert!(matches!(from_json(r#"{"name": "x"}"#, 1), Err(SemanticError::Malformed(_))));
    }
}
