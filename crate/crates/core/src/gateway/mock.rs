//! Deterministic offline backend.

use crate::metrics::word_count;
use crate::semantic::{units_from_json, AttributeKind, SemanticUnit};

use super::grammar::{extract_json, split_sentences, SentenceShape};
use super::{BackendError, BackendReply, GatewayRequest, ModelBackend, RenderedPrompt, TemplateId, QUESTION_COUNT};

/// Answers every template with rule-based text. Token counts are the word
/// counts of the caption inputs and of the reply.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl ModelBackend for MockBackend {
    fn complete(&self, request: &GatewayRequest, _prompt: &RenderedPrompt) -> Result<BackendReply, BackendError> {
        let inputs = &request.inputs;
        let first = || inputs.first().map(String::as_str).unwrap_or_default();
        let text = match request.template_id {
            TemplateId::MergeSequential => {
                let (old, new) = match inputs.as_slice() {
                    [old, new] => (old.as_str(), new.as_str()),
                    _ => return Err(BackendError::Fatal("sequential merge takes 2 captions".into())),
                };
                mock_merge_sequential(old, new)
            }
            TemplateId::MergeParallel => mock_merge_parallel(inputs),
            TemplateId::Denoise => mock_denoise(first()),
            TemplateId::ExtractUnits => extract_json(first()).to_string(),
            TemplateId::GenerateQuestions => mock_questions(first()).join("\n"),
            TemplateId::GuideFirstPerson | TemplateId::GuideSubsequent => {
                return Err(BackendError::Fatal("guideline templates are shown to people, not sent to models".into()))
            }
        };
        Ok(BackendReply {
            input_tokens: inputs.iter().map(|s| word_count(s) as u64).sum(),
            output_tokens: word_count(&text) as u64,
            text,
        })
    }
}

fn join_sentences(sentences: &[String]) -> String {
    sentences.iter().map(|s| format!("{s}.")).collect::<Vec<_>>().join(" ")
}

/// Sentence-level union of `old` and `new`. A new sentence that repeats an
/// old one is dropped; one with the same skeleton either refines the old
/// sentence (replacing it), adds nothing (dropped), or conflicts with it on
/// the same attribute kinds (replacing it, later wins). Anything else is
/// appended. Sentences of `new` only ever displace sentences of `old`.
pub fn mock_merge_sequential(old: &str, new: &str) -> String {
    let mut merged: Vec<String> = split_sentences(old);
    let mut shapes: Vec<SentenceShape> = merged.iter().map(|s| SentenceShape::of(s)).collect();
    let mut from_new = vec![false; merged.len()];
    'next: for sentence in split_sentences(new) {
        let shape = SentenceShape::of(&sentence);
        if shapes.iter().any(|s| s.normalized == shape.normalized) {
            continue;
        }
        for (pos, existing) in shapes.iter().enumerate() {
            if from_new[pos] || existing.skeleton != shape.skeleton {
                continue;
            }
            let refines = existing.slots_within(&shape);
            let covered = shape.slots_within(existing);
            let overrides = existing.kinds().iter().all(|k| shape.kinds().contains(k));
            if covered && !refines {
                continue 'next;
            }
            if refines || overrides {
                merged[pos] = sentence;
                shapes[pos] = shape;
                from_new[pos] = true;
                continue 'next;
            }
        }
        merged.push(sentence);
        shapes.push(shape);
        from_new.push(true);
    }
    join_sentences(&merged)
}

/// Order-independent union of parallel captions. Sentences are grouped by
/// skeleton; within a group, dominated variants are dropped and, among
/// variants with the same attribute kinds, the lexicographically smallest wins.
pub fn mock_merge_parallel(captions: &[String]) -> String {
    let mut groups: Vec<(String, Vec<(SentenceShape, String)>)> = Vec::new();
    for caption in captions {
        for sentence in split_sentences(caption) {
            let shape = SentenceShape::of(&sentence);
            match groups.iter_mut().find(|(k, _)| *k == shape.skeleton) {
                Some((_, members)) => members.push((shape, sentence)),
                None => groups.push((shape.skeleton.clone(), vec![(shape, sentence)])),
            }
        }
    }
    let mut out = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.0.normalized.cmp(&b.0.normalized).then_with(|| a.1.cmp(&b.1)));
        members.dedup_by(|a, b| a.0.normalized == b.0.normalized);
        let snapshot = members.clone();
        members.retain(|(shape, _)| {
            !snapshot
                .iter()
                .any(|(other, _)| shape.slots_within(other) && !other.slots_within(shape))
        });
        let mut kept: Vec<(SentenceShape, String)> = Vec::new();
        for (shape, sentence) in members {
            if !kept.iter().any(|(k, _)| k.kinds() == shape.kinds()) {
                kept.push((shape, sentence));
            }
        }
        out.extend(kept.into_iter().map(|(_, s)| s));
    }
    join_sentences(&out)
}

const CONNECTIVES: &[&str] = &["then", "furthermore", "next"];

fn bare(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Strips "then", "and then", "furthermore" and "next" (but not "next to"),
/// collapsing whitespace, until nothing changes.
pub fn mock_denoise(text: &str) -> String {
    let mut current = text.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let words: Vec<&str> = current.split_whitespace().collect();
        let mut kept: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let w = bare(words[i]);
            let next = words.get(i + 1).map(|n| bare(n));
            if w == "and" && next.as_deref() == Some("then") && words[i].chars().all(char::is_alphanumeric) {
                i += 1;
                continue;
            }
            if CONNECTIVES.contains(&w.as_str()) && !(w == "next" && next.as_deref() == Some("to")) {
                // Keep sentence punctuation carried by the dropped word.
                let terminal = words[i].chars().last().filter(|c| matches!(c, '.' | '!' | '?' | ';'));
                if let (Some(mark), Some(prev)) = (terminal, kept.last_mut()) {
                    let trimmed_len = prev.trim_end_matches([',', ':']).len();
                    prev.truncate(trimmed_len);
                    prev.push(mark);
                }
                i += 1;
                continue;
            }
            kept.push(words[i].to_string());
            i += 1;
        }
        let next = kept.join(" ");
        if next == current {
            return next;
        }
        current = next;
    }
}

fn question_for(unit: &SemanticUnit) -> String {
    let object = &unit.object_name;
    match unit.kind {
        AttributeKind::Colour => format!("What color is the {object}?"),
        AttributeKind::Amount => format!("How many {object} are there?"),
        AttributeKind::AbsoluteLocation => format!("Where is the {object} located in the picture?"),
        AttributeKind::RelativeLocation => format!("Where is the {object} relative to other objects?"),
        AttributeKind::Size => format!("How big is the {object}?"),
        AttributeKind::Shape => format!("What shape is the {object}?"),
        AttributeKind::Material => format!("What is the {object} made of?"),
        AttributeKind::ObjectDescription => format!("Is there a {object} in the picture?"),
        AttributeKind::Other => format!("What else can be said about the {object}?"),
    }
}

/// Up to five templated questions over the first extracted units, numbered Q1..
pub fn mock_questions(caption: &str) -> Vec<String> {
    let units = units_from_json(&extract_json(caption), 1).unwrap_or_default();
    let mut questions: Vec<String> = Vec::new();
    for unit in &units {
        let q = question_for(unit);
        if !questions.contains(&q) {
            questions.push(q);
        }
        if questions.len() == QUESTION_COUNT {
            break;
        }
    }
    questions
        .into_iter()
        .enumerate()
        .map(|(i, q)| format!("Q{}: {q}", i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_caption_overrides_conflicts() {
        assert_eq!(mock_merge_sequential("the car is red.", "the car is black."), "the car is black.");
        assert_eq!(mock_merge_sequential("a black car.", "a black car."), "a black car.");
        assert_eq!(
            mock_merge_sequential("a black car on a road.", "two trees left of the car."),
            "a black car on a road. two trees left of the car."
        );
    }

    #[test]
    fn refinements_replace_and_subsets_are_dropped() {
        assert_eq!(mock_merge_sequential("a car on a road.", "a red car on a road."), "a red car on a road.");
        assert_eq!(mock_merge_sequential("a big red car.", "a red car."), "a big red car.");
        assert_eq!(mock_merge_sequential("a big black car.", "a red car."), "a big black car. a red car.");
        assert_eq!(
            mock_merge_sequential("a green bridge.", "a red bridge. two yellow bridge."),
            "a red bridge. two yellow bridge."
        );
    }

    #[test]
    fn parallel_merge_ignores_order() {
        let a = vec!["a black car. the car is red.".to_string(), "two trees. the car is blue.".to_string()];
        let b = vec![a[1].clone(), a[0].clone()];
        let sa = split_sentences(&mock_merge_parallel(&a));
        let sb = split_sentences(&mock_merge_parallel(&b));
        let (mut sa, mut sb) = (sa, sb);
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
        assert_eq!(mock_merge_parallel(&["a black car.".into(), "a black car.".into()]), "a black car.");
    }

    #[test]
    fn denoise_strips_connectives() {
        assert_eq!(mock_denoise("then a car and then a road"), "a car a road");
        assert_eq!(mock_denoise("a bench next to the tree"), "a bench next to the tree");
        assert_eq!(mock_denoise("Furthermore, a boat. Next a dock"), "a boat. a dock");
        let once = mock_denoise("and then then next furthermore x");
        assert_eq!(mock_denoise(&once), once);
    }

    #[test]
    fn questions_follow_units() {
        let qs = mock_questions("The sea surface appears green.");
        assert_eq!(qs[0], "Q1: What color is the sea surface?");
    }
}
