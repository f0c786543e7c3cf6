//! Rule grammar behind the offline backend.
//!
//! Captions are split into sentences and lowercase tokens. Noun phrases are
//! `[amount | article] modifiers* head+`, where modifiers come from small
//! lexicons (colour, size, shape, material) and the head is any run of words
//! no lexicon claims. The first noun phrase of a clause is its subject;
//! predicate modifiers, locations and leftover words attach to it.

use std::collections::HashMap;

use serde_json::{Map, Value};

use crate::semantic::AttributeKind;

const ARTICLES: &[&str] = &["a", "an", "the"];

const NUMBERS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty", "thirty",
    "forty", "fifty", "hundred", "hundreds", "dozen", "dozens", "thousands",
];

const QUANTIFIERS: &[&str] = &[
    "some", "several", "many", "few", "multiple", "numerous", "various", "countless", "both", "single",
    "pair", "couple",
];

const MULTIWORD_AMOUNTS: &[&[&str]] = &[
    &["a", "large", "number", "of"],
    &["a", "small", "number", "of"],
    &["a", "patch", "of"],
    &["patches", "of"],
    &["a", "row", "of"],
    &["rows", "of"],
    &["a", "group", "of"],
    &["groups", "of"],
    &["a", "cluster", "of"],
    &["clusters", "of"],
    &["a", "column", "of"],
    &["a", "pair", "of"],
    &["a", "couple", "of"],
    &["a", "lot", "of"],
    &["lots", "of"],
    &["a", "number", "of"],
    &["a", "line", "of"],
    &["a", "pile", "of"],
    &["a", "bunch", "of"],
    &["a", "variety", "of"],
    &["a", "series", "of"],
    &["a", "set", "of"],
    &["a", "stack", "of"],
    &["a", "herd", "of"],
    &["a", "flock", "of"],
    &["a", "handful", "of"],
    &["plenty", "of"],
    &["a", "few"],
];

const COLOURS: &[&str] = &[
    "red", "green", "blue", "yellow", "black", "white", "gray", "grey", "brown", "orange", "purple", "pink",
    "silver", "golden", "gold", "beige", "turquoise", "cyan", "navy", "teal", "tan", "colorful", "colourful",
];

const COLOUR_MODIFIERS: &[&str] = &["dark", "light", "pale", "bright", "deep"];

const SIZES: &[&str] = &[
    "small", "large", "big", "tiny", "huge", "tall", "short", "long", "wide", "narrow", "little", "giant",
    "massive", "medium", "high", "low",
];

const SHAPES: &[&str] = &[
    "round", "square", "rectangular", "circular", "triangular", "oval", "curved", "straight", "flat", "conical",
    "cylindrical", "irregular",
];

const MATERIALS: &[&str] = &[
    "wooden", "metal", "metallic", "concrete", "stone", "glass", "brick", "plastic", "asphalt", "steel", "iron",
    "paved", "dirt", "grassy", "sandy",
];

const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "been", "being"];

const VERBS: &[&str] = &[
    "appears", "appear", "seems", "seem", "looks", "look", "stands", "stand", "sits", "sit", "lies", "lie",
    "shows", "show", "covers", "cover", "runs", "run", "grows", "grow", "extends", "extend", "surrounds",
    "leads", "lead", "hangs", "hang", "rests", "rest", "flows", "flow", "stretches", "stretch", "occupies",
    "occupy", "fills", "fill", "dominates", "can", "could", "may", "seen", "lined", "located", "situated",
];

const OTHER_ADJECTIVES: &[&str] = &[
    "visible", "empty", "open", "closed", "busy", "old", "new", "modern", "clear", "calm", "dense", "sparse",
    "full", "bare", "lush", "clean", "dirty", "shiny", "dry", "wet",
];

const STOPWORDS: &[&str] = &[
    "there", "here", "it", "its", "they", "their", "them", "this", "these", "those", "also", "very", "quite",
    "rather", "too", "as", "well", "just", "only", "not", "no", "s", "then", "furthermore", "next",
    "additionally", "moreover",
];

const CLAUSE_BREAKS: &[&str] = &[",", "and", "while", "which", "where", "whereas", "but", "or", "that", "who"];

const PLAIN_PREPOSITIONS: &[&str] = &[
    "of", "in", "at", "on", "with", "by", "from", "for", "into", "onto", "to", "within", "through", "toward",
    "towards", "has", "have", "having", "contains", "containing", "including", "featuring",
];

const RELATIVE_PREPOSITIONS: &[&[&str]] = &[
    &["on", "the", "left", "side", "of"],
    &["on", "the", "right", "side", "of"],
    &["to", "the", "left", "of"],
    &["to", "the", "right", "of"],
    &["on", "the", "left", "of"],
    &["on", "the", "right", "of"],
    &["in", "front", "of"],
    &["on", "top", "of"],
    &["at", "the", "back", "of"],
    &["next", "to"],
    &["adjacent", "to"],
    &["close", "to"],
    &["surrounded", "by"],
    &["left", "of"],
    &["right", "of"],
    &["behind"],
    &["under"],
    &["underneath"],
    &["below"],
    &["above"],
    &["beside"],
    &["near"],
    &["between"],
    &["along"],
    &["alongside"],
    &["around"],
    &["across"],
    &["over"],
    &["beneath"],
    &["opposite"],
    &["among"],
    &["inside"],
    &["outside"],
    &["against"],
    &["atop"],
    &["beyond"],
];

const ABSOLUTE_PREPOSITIONS: &[&str] = &["in", "at", "on"];

const LOCATION_START: &[&str] = &[
    "top", "bottom", "left", "right", "upper", "lower", "center", "centre", "middle", "corner", "background",
    "foreground", "edge", "far", "central",
];

const LOCATION_CONTINUE: &[&str] = &[
    "side", "sides", "area", "areas", "region", "part", "portion", "half", "corners", "edges", "section", "of",
    "the", "image", "picture", "photo", "frame", "scene",
];

const NOUN_EXCEPTIONS: &[&str] = &[
    "building", "buildings", "ceiling", "parking", "railing", "railings", "painting", "paintings", "clothing",
    "bedding", "awning", "awnings", "crossing", "landing", "opening", "string", "ring", "king", "wing",
    "wings", "spring", "thing", "things", "swing", "swings", "bed", "beds", "shed", "sheds", "sled", "seaweed",
    "reed", "reeds", "seed", "seeds", "weed", "weeds", "steed", "ceilings", "family", "lily", "jelly", "belly",
    "ceiling", "pudding", "sapling", "saplings", "dumpling", "lightning", "wedding",
];

fn is_in(word: &str, set: &[&str]) -> bool {
    set.contains(&word)
}

fn is_colour(word: &str) -> bool {
    is_in(word, COLOURS) || word.strip_suffix("ish").is_some_and(|w| is_in(w, COLOURS))
}

fn is_colour_word(word: &str) -> bool {
    is_colour(word) || is_in(word, COLOUR_MODIFIERS)
}

fn is_number(word: &str) -> bool {
    is_in(word, NUMBERS) || (!word.is_empty() && word.chars().all(|c| c.is_ascii_digit()))
}

fn is_location_word(word: &str) -> bool {
    word.split('-').all(|part| is_in(part, LOCATION_START) || is_in(part, LOCATION_CONTINUE))
        && !word.is_empty()
}

fn starts_location(word: &str) -> bool {
    word.split('-').next().is_some_and(|part| is_in(part, LOCATION_START))
}

fn is_participle(word: &str) -> bool {
    !is_in(word, NOUN_EXCEPTIONS)
        && !is_colour(word)
        && ((word.len() > 3 && word.ends_with("ed")) || (word.len() > 4 && word.ends_with("ing")))
}

fn is_adverb(word: &str) -> bool {
    word.len() > 3 && word.ends_with("ly") && !is_in(word, NOUN_EXCEPTIONS)
}

fn is_modifier(word: &str) -> bool {
    is_colour_word(word)
        || is_in(word, SIZES)
        || is_in(word, SHAPES)
        || is_in(word, MATERIALS)
        || is_in(word, OTHER_ADJECTIVES)
        || is_participle(word)
}

fn is_nouny(word: &str) -> bool {
    !(word == ","
        || is_in(word, ARTICLES)
        || is_number(word)
        || is_in(word, QUANTIFIERS)
        || is_modifier(word)
        || is_in(word, COPULAS)
        || is_in(word, VERBS)
        || is_in(word, STOPWORDS)
        || is_in(word, CLAUSE_BREAKS)
        || is_in(word, PLAIN_PREPOSITIONS)
        || is_location_word(word)
        || RELATIVE_PREPOSITIONS.iter().any(|p| p.len() == 1 && p[0] == word)
        || is_adverb(word))
}

/// Sentences of a caption as trimmed text without their terminal punctuation.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', ';', '\n'])
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

/// Lowercase word tokens; commas and colons become `","`.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for raw in sentence.split_whitespace() {
        let lowered = raw.to_lowercase();
        let breaks = lowered.ends_with(',') || lowered.ends_with(':');
        let word: String = lowered
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == '-' || *c == '\'')
            .collect::<String>()
            .trim_matches(['-', '\''])
            .to_string();
        let word = word.strip_suffix("'s").unwrap_or(&word).to_string();
        if !word.is_empty() {
            tokens.push(word);
        }
        if breaks {
            tokens.push(",".to_string());
        }
    }
    tokens
}

pub fn tokenize_sentences(text: &str) -> Vec<Vec<String>> {
    split_sentences(text).iter().map(|s| tokenize(s)).collect()
}

fn match_sequence(tokens: &[String], i: usize, pattern: &[&str]) -> bool {
    tokens.len() >= i + pattern.len() && pattern.iter().zip(&tokens[i..]).all(|(p, t)| p == t)
}

/// Amount phrase at `i`: (token length, value).
fn match_amount(tokens: &[String], i: usize) -> Option<(usize, String)> {
    for pattern in MULTIWORD_AMOUNTS {
        if match_sequence(tokens, i, pattern) {
            return Some((pattern.len(), pattern.join(" ")));
        }
    }
    let word = tokens.get(i)?;
    (is_number(word) || is_in(word, QUANTIFIERS)).then(|| (1, word.clone()))
}

/// Colour run at `i`, allowing "and" between two colours.
fn match_colour(tokens: &[String], i: usize) -> Option<(usize, String)> {
    let mut j = i;
    while j < tokens.len() {
        let joins_colours = tokens[j] == "and" && j > i && tokens.get(j + 1).is_some_and(|w| is_colour_word(w));
        if !(is_colour_word(&tokens[j]) || joins_colours) {
            break;
        }
        j += 1;
    }
    (j > i).then(|| (j - i, tokens[i..j].join(" ")))
}

fn match_relative(tokens: &[String], i: usize) -> Option<usize> {
    RELATIVE_PREPOSITIONS
        .iter()
        .find(|p| match_sequence(tokens, i, p))
        .map(|p| p.len())
}

/// Absolute location phrase at `i`; returns its end.
fn match_absolute(tokens: &[String], i: usize) -> Option<usize> {
    if !is_in(tokens.get(i)?, ABSOLUTE_PREPOSITIONS) {
        return None;
    }
    let mut j = i + 1;
    if tokens.get(j).is_some_and(|w| w == "the") {
        j += 1;
    }
    if !tokens.get(j).is_some_and(|w| starts_location(w)) {
        return None;
    }
    while j < tokens.len() && is_location_word(&tokens[j]) {
        j += 1;
    }
    while j > i + 1 && (tokens[j - 1] == "of" || tokens[j - 1] == "the") {
        j -= 1;
    }
    Some(j)
}

fn modifier_kind(word: &str) -> Option<AttributeKind> {
    if is_in(word, SIZES) {
        Some(AttributeKind::Size)
    } else if is_in(word, SHAPES) {
        Some(AttributeKind::Shape)
    } else if is_in(word, MATERIALS) {
        Some(AttributeKind::Material)
    } else if is_in(word, OTHER_ADJECTIVES) || is_participle(word) {
        Some(AttributeKind::Other)
    } else {
        None
    }
}

/// Attribute slot at `i` among the lexicon-driven kinds.
fn match_slot(tokens: &[String], i: usize) -> Option<(usize, AttributeKind, String)> {
    if let Some((len, value)) = match_amount(tokens, i) {
        return Some((len, AttributeKind::Amount, value));
    }
    if let Some((len, value)) = match_colour(tokens, i) {
        return Some((len, AttributeKind::Colour, value));
    }
    let word = tokens.get(i)?;
    match modifier_kind(word) {
        Some(kind) if kind != AttributeKind::Other => Some((1, kind, word.clone())),
        _ => None,
    }
}

/// A sentence reduced to its non-attribute words and its attribute slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceShape {
    pub normalized: String,
    pub skeleton: String,
    pub slots: Vec<(AttributeKind, String)>,
}

impl SentenceShape {
    pub fn of(sentence: &str) -> Self {
        let tokens = tokenize(sentence);
        let mut skeleton = Vec::new();
        let mut slots = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if let Some((len, kind, value)) = match_slot(&tokens, i) {
                slots.push((kind, value));
                i += len;
            } else {
                if !is_in(&tokens[i], ARTICLES) && tokens[i] != "," {
                    skeleton.push(tokens[i].as_str());
                }
                i += 1;
            }
        }
        slots.sort();
        let normalized = tokens.iter().filter(|t| *t != ",").cloned().collect::<Vec<_>>().join(" ");
        let skeleton = if skeleton.is_empty() { normalized.clone() } else { skeleton.join(" ") };
        SentenceShape { normalized, skeleton, slots }
    }

    /// True when every slot of `self` also appears in `other`.
    pub fn slots_within(&self, other: &SentenceShape) -> bool {
        let mut pool = other.slots.clone();
        self.slots.iter().all(|slot| match pool.iter().position(|s| s == slot) {
            Some(p) => {
                pool.swap_remove(p);
                true
            }
            None => false,
        })
    }

    pub fn kinds(&self) -> Vec<AttributeKind> {
        let mut kinds: Vec<AttributeKind> = self.slots.iter().map(|(k, _)| *k).collect();
        kinds.dedup();
        kinds
    }
}

struct NounPhrase {
    name: String,
    attributes: Vec<(AttributeKind, String)>,
    end: usize,
}

fn parse_noun_phrase(tokens: &[String], start: usize) -> Option<NounPhrase> {
    let mut i = start;
    let mut attributes = Vec::new();
    if let Some((len, value)) = match_amount(tokens, i) {
        attributes.push((AttributeKind::Amount, value));
        i += len;
    } else if tokens.get(i).is_some_and(|w| is_in(w, ARTICLES)) {
        i += 1;
    }
    while i < tokens.len() {
        if let Some((len, value)) = match_colour(tokens, i) {
            attributes.push((AttributeKind::Colour, value));
            i += len;
        } else if let Some(kind) = modifier_kind(&tokens[i]) {
            attributes.push((kind, tokens[i].clone()));
            i += 1;
        } else {
            break;
        }
    }
    let head_start = i;
    while i < tokens.len() && is_nouny(&tokens[i]) {
        i += 1;
    }
    if i == head_start {
        return None;
    }
    Some(NounPhrase { name: tokens[head_start..i].join(" "), attributes, end: i })
}

#[derive(Default)]
struct Extraction {
    objects: Vec<(String, Vec<(AttributeKind, String)>)>,
    index: HashMap<String, usize>,
}

impl Extraction {
    fn object(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.objects.push((name.to_string(), Vec::new()));
        self.index.insert(name.to_string(), self.objects.len() - 1);
        self.objects.len() - 1
    }

    fn add_phrase(&mut self, phrase: &NounPhrase) -> usize {
        let i = self.object(&phrase.name);
        self.objects[i].1.extend(phrase.attributes.iter().cloned());
        i
    }

    fn attach(&mut self, object: usize, kind: AttributeKind, value: String) {
        let attributes = &mut self.objects[object].1;
        if !attributes.iter().any(|(k, v)| *k == kind && *v == value) {
            attributes.push((kind, value));
        }
    }

    fn sentence(&mut self, tokens: &[String]) {
        let mut subject: Option<usize> = None;
        let mut fallback: Option<usize> = None;
        let mut pending: Vec<(AttributeKind, String)> = Vec::new();
        let mut clause_start = true;
        let mut i = 0;

        macro_rules! attach_subject {
            ($kind:expr, $value:expr) => {
                match subject {
                    Some(s) => self.attach(s, $kind, $value),
                    None => pending.push(($kind, $value)),
                }
            };
        }

        while i < tokens.len() {
            let word = tokens[i].as_str();
            if clause_start && (word == "with" || word == "there") {
                i += 1;
                continue;
            }
            if is_in(word, CLAUSE_BREAKS) && match_colour(tokens, i).is_none() {
                fallback = subject.or(fallback);
                if let Some(target) = subject.or(fallback) {
                    for (k, v) in pending.drain(..) {
                        self.attach(target, k, v);
                    }
                }
                pending.clear();
                subject = None;
                clause_start = true;
                i += 1;
                continue;
            }
            clause_start = false;
            if let Some(len) = match_relative(tokens, i) {
                if let Some(phrase) = parse_noun_phrase(tokens, i + len) {
                    let mut end = phrase.end;
                    if let Some(abs_end) = match_absolute(tokens, end) {
                        end = abs_end;
                    }
                    let value = tokens[i..end].join(" ");
                    self.add_phrase(&phrase);
                    attach_subject!(AttributeKind::RelativeLocation, value);
                    i = end;
                } else {
                    i += len;
                }
                continue;
            }
            if let Some(end) = match_absolute(tokens, i) {
                attach_subject!(AttributeKind::AbsoluteLocation, tokens[i..end].join(" "));
                i = end;
                continue;
            }
            if is_in(word, COPULAS) || is_in(word, STOPWORDS) || is_adverb(word) {
                i += 1;
                continue;
            }
            if is_in(word, PLAIN_PREPOSITIONS) {
                match parse_noun_phrase(tokens, i + 1) {
                    Some(phrase) => {
                        self.add_phrase(&phrase);
                        i = phrase.end;
                    }
                    None => i += 1,
                }
                continue;
            }
            if let Some(phrase) = parse_noun_phrase(tokens, i) {
                let object = self.add_phrase(&phrase);
                if subject.is_none() {
                    subject = Some(object);
                    for (k, v) in pending.drain(..) {
                        self.attach(object, k, v);
                    }
                }
                i = phrase.end;
                continue;
            }
            if let Some((len, kind, value)) = match_slot(tokens, i) {
                attach_subject!(kind, value);
                i += len;
                continue;
            }
            attach_subject!(AttributeKind::Other, word.to_string());
            i += 1;
        }
        if let Some(target) = subject.or(fallback) {
            for (k, v) in pending.drain(..) {
                self.attach(target, k, v);
            }
        }
    }

    fn into_json(self) -> Value {
        let objects = self
            .objects
            .into_iter()
            .map(|(name, attributes)| {
                let mut grouped: Vec<(AttributeKind, Vec<String>)> = Vec::new();
                for (kind, value) in attributes {
                    match grouped.iter_mut().find(|(k, _)| *k == kind) {
                        Some((_, values)) => values.push(value),
                        None => grouped.push((kind, vec![value])),
                    }
                }
                let mut map = Map::new();
                for (kind, mut values) in grouped {
                    let value = if values.len() == 1 && kind != AttributeKind::Other {
                        Value::String(values.remove(0))
                    } else {
                        Value::Array(values.into_iter().map(Value::String).collect())
                    };
                    map.insert(kind.label().to_string(), value);
                }
                serde_json::json!({ "name": name, "attributes": map })
            })
            .collect();
        Value::Array(objects)
    }
}

/// Object-list JSON for a caption, in the shape a model is asked to return.
pub fn extract_json(caption: &str) -> Value {
    let mut extraction = Extraction::default();
    for tokens in tokenize_sentences(caption) {
        extraction.sentence(&tokens);
    }
    extraction.into_json()
}
