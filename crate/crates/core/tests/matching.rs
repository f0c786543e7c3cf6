mod common;

use std::sync::Arc;

use cotalk_core::dedup::assignment::{max_weight_matching, MAX_WEIGHT};
use cotalk_core::dedup::{cosine, duplication_rate, DuplicationMatcher, EmbeddingProvider, HashEmbedding, ProviderError};
use cotalk_core::retry::RetryPolicy;
use cotalk_core::semantic::{build_tree, AttributeKind, SemanticUnit};
use common::brute_force;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn assignment_equals_exhaustive_optimum(
        rows in 0usize..=6,
        cols in 0usize..=6,
        cells in prop::collection::vec(prop::option::weighted(0.6, 0i64..=4), 36),
        scale in prop::sample::select(vec![1i64, 1000, MAX_WEIGHT / 4]),
    ) {
        let w = |i: usize, j: usize| cells[i * 6 + j].map(|x| x * scale);
        let got = max_weight_matching(rows, cols, w);
        let (count, total, pairs) = brute_force(rows, cols, &w);
        let got_total: i64 = got.iter().map(|&(i, j)| w(i, j).unwrap()).sum();
        prop_assert_eq!(got.len(), count);
        prop_assert_eq!(got_total, total);
        prop_assert_eq!(got, pairs);
    }
}

fn arb_units(max: usize) -> impl Strategy<Value = Vec<SemanticUnit>> {
    let names = prop::sample::select(vec!["car", "black car", "road", "trees", "tree"]);
    let kinds = prop::sample::select(vec![AttributeKind::Colour, AttributeKind::Amount, AttributeKind::RelativeLocation]);
    let values = prop::sample::select(vec!["black", "dark black", "two", "a pair of", "left of the car", "left of car"]);
    prop::collection::vec((names, kinds, values).prop_map(|(n, k, v)| SemanticUnit::new(n, k, v, 1).unwrap()), 0..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn embedding_matching_equals_exhaustive_optimum(a in arb_units(6), b in arb_units(6), threshold in 0.2f64..0.9) {
        let provider = HashEmbedding::default();
        let matcher = DuplicationMatcher::embedding(Arc::new(provider.clone())).with_threshold(threshold).unwrap();
        let m = matcher.match_units(&a, &b).unwrap();

        let texts: Vec<String> = a.iter().chain(&b).map(SemanticUnit::render).collect();
        let vectors = provider.embed(&texts).unwrap();
        let sim = |i: usize, j: usize| {
            if a[i].id() == b[j].id() { 1.0 } else { cosine(&vectors[i], &vectors[a.len() + j]) }
        };
        let w = |i: usize, j: usize| {
            let s = sim(i, j);
            (s >= threshold).then(|| (s.clamp(0.0, 1.0) * MAX_WEIGHT as f64).round() as i64)
        };
        let (count, _, pairs) = brute_force(a.len(), b.len(), &w);
        prop_assert_eq!(m.len(), count);
        prop_assert_eq!(m.pairs(), pairs.as_slice());
        let oracle_total: f64 = pairs.iter().map(|&(i, j)| sim(i, j)).sum();
        prop_assert!((m.total_similarity() - oracle_total).abs() < 1e-9);
    }

    #[test]
    fn exact_matching_counts_common_identities(a in arb_units(6), b in arb_units(6)) {
        let m = DuplicationMatcher::exact().match_units(&a, &b).unwrap();
        let w = |i: usize, j: usize| (a[i].id() == b[j].id()).then_some(1);
        prop_assert_eq!(m.len(), brute_force(a.len(), b.len(), &w).0);
        for &(i, j) in m.pairs() {
            prop_assert_eq!(a[i].id(), b[j].id());
        }
    }

    #[test]
    fn duplication_bounds(a in arb_units(8), b in arb_units(8)) {
        let (ta, tb) = (build_tree(&a), build_tree(&b));
        let rate = duplication_rate(&ta, &tb, &DuplicationMatcher::exact()).unwrap();
        prop_assert!((0.0..=100.0).contains(&rate));
        if !tb.is_empty() {
            prop_assert_eq!(duplication_rate(&tb, &tb, &DuplicationMatcher::exact()).unwrap(), 100.0);
        }
    }
}

#[test]
fn duplication_identical_and_disjoint() {
    let a = build_tree(&[
        SemanticUnit::new("car", AttributeKind::Colour, "black", 1).unwrap(),
        SemanticUnit::new("road", AttributeKind::Amount, "two", 1).unwrap(),
    ]);
    let b = build_tree(&[SemanticUnit::new("sky", AttributeKind::Colour, "blue", 2).unwrap()]);
    let exact = DuplicationMatcher::exact();
    assert_eq!(duplication_rate(&a, &a, &exact).unwrap(), 100.0);
    assert_eq!(duplication_rate(&a, &b, &exact).unwrap(), 0.0);
    assert_eq!(duplication_rate(&a, &build_tree(&[]), &exact).unwrap(), 0.0);
    let embed = DuplicationMatcher::embedding(Arc::new(HashEmbedding::default()));
    assert_eq!(duplication_rate(&a, &a, &embed).unwrap(), 100.0);
}

struct Flaky {
    failures: std::sync::atomic::AtomicU32,
}

impl EmbeddingProvider for Flaky {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if self.failures.fetch_sub(1, std::sync::atomic::Ordering::SeqCst) > 0 {
            return Err(ProviderError::Transient("timeout".into()));
        }
        HashEmbedding::default().embed(texts)
    }
}

#[test]
fn transient_provider_failures_are_retried() {
    let units = vec![SemanticUnit::new("car", AttributeKind::Colour, "black", 1).unwrap()];
    let ok = DuplicationMatcher::embedding(Arc::new(Flaky { failures: 2.into() })).with_retry(RetryPolicy::immediate(3));
    assert_eq!(ok.match_units(&units, &units).unwrap().len(), 1);
    let down = DuplicationMatcher::embedding(Arc::new(Flaky { failures: 10.into() })).with_retry(RetryPolicy::immediate(3));
    assert!(down.match_units(&units, &units).is_err());
}
