use std::fmt;

use serde::{Deserialize, Serialize};

use super::SemanticError;

/// Value carried by an existence unit: an object mentioned with no attributes.
pub const EXISTENCE_VALUE: &str = "present";

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Attribute categories an object edge can carry.
///
/// The declaration order is the canonical edge order inside an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    AbsoluteLocation,
    RelativeLocation,
    Colour,
    Amount,
    Size,
    Shape,
    Material,
    ObjectDescription,
    Other,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 9] = [
        AttributeKind::AbsoluteLocation,
        AttributeKind::RelativeLocation,
        AttributeKind::Colour,
        AttributeKind::Amount,
        AttributeKind::Size,
        AttributeKind::Shape,
        AttributeKind::Material,
        AttributeKind::ObjectDescription,
        AttributeKind::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttributeKind::AbsoluteLocation => "absolute_location",
            AttributeKind::RelativeLocation => "relative_location",
            AttributeKind::Colour => "colour",
            AttributeKind::Amount => "amount",
            AttributeKind::Size => "size",
            AttributeKind::Shape => "shape",
            AttributeKind::Material => "material",
            AttributeKind::ObjectDescription => "object_description",
            AttributeKind::Other => "other",
        }
    }

    /// Maps an extraction label to a kind. Unknown labels become [`AttributeKind::Other`].
    pub fn from_label(label: &str) -> AttributeKind {
        let key: String = label
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match key.as_str() {
            "absolute_location" => AttributeKind::AbsoluteLocation,
            "relative_location" => AttributeKind::RelativeLocation,
            "colour" | "color" => AttributeKind::Colour,
            "amount" | "quantity" => AttributeKind::Amount,
            "size" => AttributeKind::Size,
            "shape" => AttributeKind::Shape,
            "material" => AttributeKind::Material,
            "object_description" => AttributeKind::ObjectDescription,
            _ => AttributeKind::Other,
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Exact-match identity of a unit: `(object_name, kind, value)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub object_name: String,
    pub kind: AttributeKind,
    pub value: String,
}

impl UnitId {
    /// The phrase compared by embedding matchers: "object kind value".
    pub fn render(&self) -> String {
        format!("{} {} {}", self.object_name, self.kind.label().replace('_', " "), self.value)
    }

    pub fn is_existence(&self) -> bool {
        self.kind == AttributeKind::ObjectDescription && self.value == EXISTENCE_VALUE
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.object_name, self.kind, self.value)
    }
}

/// One object/attribute edge contributed by an annotation round.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticUnit {
    pub object_name: String,
    pub kind: AttributeKind,
    pub value: String,
    pub source_round: u32,
}

impl SemanticUnit {
    /// Builds a normalized unit. Object names lose a leading article; values keep theirs.
    pub fn new(
        object_name: &str,
        kind: AttributeKind,
        value: &str,
        source_round: u32,
    ) -> Result<Self, SemanticError> {
        let object_name = normalize_object_name(object_name);
        if object_name.is_empty() {
            return Err(SemanticError::EmptyObjectName);
        }
        let value = normalize_value(value);
        if value.is_empty() {
            return Err(SemanticError::EmptyValue { object_name });
        }
        Ok(SemanticUnit { object_name, kind, value, source_round })
    }

    /// Bare existence of an object.
    pub fn existence(object_name: &str, source_round: u32) -> Result<Self, SemanticError> {
        SemanticUnit::new(object_name, AttributeKind::ObjectDescription, EXISTENCE_VALUE, source_round)
    }

    pub fn id(&self) -> UnitId {
        UnitId {
            object_name: self.object_name.clone(),
            kind: self.kind,
            value: self.value.clone(),
        }
    }

    pub fn is_existence(&self) -> bool {
        self.kind == AttributeKind::ObjectDescription && self.value == EXISTENCE_VALUE
    }

    pub fn render(&self) -> String {
        self.id().render()
    }
}

fn collapse(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn trim_edges(text: &str) -> &str {
    text.trim_matches(|c: char| !(c.is_alphanumeric() || c == '%' || c == '-'))
}

/// Lowercases, collapses whitespace and drops one leading article.
pub fn normalize_object_name(raw: &str) -> String {
    let collapsed = collapse(trim_edges(raw.trim()));
    let mut words: Vec<&str> = collapsed.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    trim_edges(&words.join(" ")).to_string()
}

/// Lowercases and collapses whitespace; articles are kept since "a"/"an" are amounts.
pub fn normalize_value(raw: &str) -> String {
    trim_edges(&collapse(raw)).to_string()
}
