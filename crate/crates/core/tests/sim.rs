use cotalk_core::sim::{
    cotalk_time, delta_t, parallel_time, seconds, simulate_trial, simulate_trials, single_time, strategy_time,
    OutputChannel, OverlapModel, SimScenario, Strategy, V_READ_WPM, V_TALK_WPM,
};
use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy as _};
use proptest::strategy::BoxedStrategy;

fn scenario_strategy() -> BoxedStrategy<SimScenario> {
    (5usize..40, 0.1f64..1.0, 0.1f64..1.0, 0.5f64..8.0, 0.0f64..60.0, any::<bool>(), any::<u64>()).prop_map(
        |(n, f1, f2, w, t_o, typing, seed)| {
            let c1 = ((n as f64 * f1).ceil() as usize).clamp(1, n);
            let c2 = ((c1 as f64 * f2).floor() as usize).max(1);
            SimScenario {
                n_units: n,
                annotator_capacity: vec![c1, c2],
                words_per_unit: w,
                t_observe_image: t_o,
                output_channel: if typing { OutputChannel::Typing } else { OutputChannel::Speech },
                rng_seed: seed,
                ..SimScenario::default()
            }
        },
    )
    .boxed()
}

/// Probability that `m` uniform draws of `c` out of `n` units cover exactly
/// `j` units, by inclusion-exclusion over the uncovered set.
fn coverage_distribution(n: usize, c: usize, m: usize) -> Vec<f64> {
    let choose = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    (0..=n)
        .map(|j| {
            // P(covered set is a given j-set) = sum_i (-1)^i C(j,i) [C(j-i,c)/C(n,c)]^m
            let exact_set: f64 = (0..=j)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    sign * choose(j, i) * (choose(j - i, c) / choose(n, c)).powi(m as i32)
                })
                .sum();
            choose(n, j) * exact_set
        })
        .collect()
}

#[test]
fn inclusion_exclusion_oracle_matches_parallel_coverage() {
    for &(n, c, m) in &[(10usize, 4usize, 3usize), (20, 10, 3), (12, 3, 4), (8, 8, 2)] {
        let dist = coverage_distribution(n, c, m);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mean: f64 = dist.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
        let var: f64 = dist.iter().enumerate().map(|(j, p)| (j as f64 - mean).powi(2) * p).sum();
        let closed = n as f64 * (1.0 - ((n - c) as f64 / n as f64).powi(m as i32));
        assert!((mean - closed).abs() < 1e-9, "oracle disagrees with the occupancy mean");

        let s = SimScenario { n_units: n, annotator_capacity: vec![c], ..SimScenario::default() };
        let trials = 4000;
        let summary = simulate_trials(&s, Strategy::Parallel { m }, trials).unwrap();
        let se = (var / trials as f64).sqrt().max(1e-12);
        assert!(
            (summary.covered_units.mean - mean).abs() <= 4.0 * se,
            "n={n} c={c} m={m}: simulated {} vs exact {mean}",
            summary.covered_units.mean
        );
        let (lo, hi) = (summary.covered_units.min as usize, summary.covered_units.max as usize);
        assert!(dist[lo] > 0.0 && dist[hi] > 0.0, "simulated an impossible coverage");
    }
}

#[test]
fn default_traces() {
    let s = SimScenario::default();
    assert_eq!(simulate_trial(&s, Strategy::Cotalk { n: 2 }, 0).unwrap().info_gain, vec![30.0, 15.0]);
    assert_eq!(s.capacity(3), 7);
    assert_eq!(s.capacity(5), 1);
    assert!((cotalk_time(&s, 2) - 137.506).abs() < 1e-3);
    let expected_parallel = 3.0 * (20.0 + 30.0 * 4.0 * 60.0 / V_TALK_WPM);
    assert!((parallel_time(&s, 3) - expected_parallel).abs() < 1e-9);
}

#[test]
fn round_two_gain_on_default_scenario() {
    let s = SimScenario::default();
    let trials = 2000;
    let par = simulate_trials(&s, Strategy::Parallel { m: 2 }, trials).unwrap();
    let round2 = par.info_gain[1];
    // Round 2 new units are hypergeometric: 30 draws, 30 of 60 still new.
    let (n, k, draws) = (60.0f64, 30.0f64, 30.0f64);
    let mean = draws * k / n;
    let var = draws * (k / n) * (1.0 - k / n) * (n - draws) / (n - 1.0);
    assert_eq!(mean, 15.0);
    assert!((round2.mean - mean).abs() <= 3.0 * (var / trials as f64).sqrt());
}

#[test]
fn reproducible_for_a_seed() {
    let s = SimScenario::default();
    for strategy in [Strategy::Single, Strategy::Parallel { m: 3 }, Strategy::Cotalk { n: 3 }] {
        let a = simulate_trials(&s, strategy, 300).unwrap();
        let b = simulate_trials(&s, strategy, 300).unwrap();
        assert_eq!(a, b);
    }
    let other = SimScenario { rng_seed: 7, ..SimScenario::default() };
    assert_ne!(
        simulate_trial(&s, Strategy::Parallel { m: 3 }, 0).unwrap().coverage_error,
        simulate_trial(&other, Strategy::Parallel { m: 3 }, 0).unwrap().coverage_error
    );
}

#[test]
fn parallel_duplication_grows_with_capacity_share() {
    let mut last = -1.0;
    for c in [6usize, 12, 24, 36, 48] {
        let s = SimScenario { annotator_capacity: vec![c], ..SimScenario::default() };
        let d = simulate_trials(&s, Strategy::Parallel { m: 3 }, 1500).unwrap().duplication_pct.mean;
        // Expected share of already-seen picks, averaged over rounds 2 and 3.
        let q = 1.0 - c as f64 / 60.0;
        let expected = 100.0 * ((1.0 - q) + (1.0 - q * q)) / 2.0;
        assert!((d - expected).abs() < 2.0, "c={c}: {d} vs {expected}");
        assert!(d > last);
        last = d;
    }
}

#[test]
fn bernoulli_overlap_mean() {
    let s = SimScenario { parallel_overlap_model: OverlapModel::Bernoulli { p: 0.25 }, ..SimScenario::default() };
    let summary = simulate_trials(&s, Strategy::Parallel { m: 3 }, 3000).unwrap();
    let expected = 60.0 * (1.0 - 0.75f64.powi(3));
    assert!((summary.covered_units.mean - expected).abs() < 4.0 * summary.covered_units.std_error(3000));
}

#[test]
fn boundary_gap_is_zero() {
    let s = SimScenario {
        annotator_capacity: vec![20, 20],
        t_observe_image: 0.0,
        v_read: V_TALK_WPM,
        ..SimScenario::default()
    };
    let d = delta_t(&s, 2, 3).unwrap();
    assert!(d.seconds.abs() < 1e-9, "{}", d.seconds);
    assert!(!d.premise_holds());
}

#[test]
fn rejects_invalid_scenarios() {
    let bad = [
        SimScenario { n_units: 0, ..SimScenario::default() },
        SimScenario { annotator_capacity: vec![], ..SimScenario::default() },
        SimScenario { annotator_capacity: vec![61], ..SimScenario::default() },
        SimScenario { v_read: 0.0, ..SimScenario::default() },
        SimScenario { t_observe_image: -1.0, ..SimScenario::default() },
        SimScenario { diminish_factor: 1.5, ..SimScenario::default() },
        SimScenario { parallel_overlap_model: OverlapModel::Bernoulli { p: 2.0 }, ..SimScenario::default() },
    ];
    for s in bad {
        assert!(simulate_trial(&s, Strategy::Single, 0).is_err(), "{s:?}");
    }
    assert!(simulate_trial(&SimScenario::default(), Strategy::Parallel { m: 0 }, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn one_round_cotalk_is_single(s in scenario_strategy(), trial in 0u64..50) {
        let single = simulate_trial(&s, Strategy::Single, trial).unwrap();
        let one = simulate_trial(&s, Strategy::Cotalk { n: 1 }, trial).unwrap();
        prop_assert_eq!(single, one);
        prop_assert!((single_time(&s) - cotalk_time(&s, 1)).abs() < 1e-12);
    }

    #[test]
    fn simulated_time_equals_closed_form(s in scenario_strategy(), rounds in 1usize..5, trial in 0u64..50) {
        for strategy in [Strategy::Single, Strategy::Parallel { m: rounds }, Strategy::Cotalk { n: rounds }] {
            let out = simulate_trial(&s, strategy, trial).unwrap();
            prop_assert!((out.total_time_s - strategy_time(&s, strategy)).abs() < 1e-9, "{strategy}");
        }
    }

    #[test]
    fn cotalk_only_covers_the_residual(s in scenario_strategy(), rounds in 1usize..6, trial in 0u64..50) {
        let out = simulate_trial(&s, Strategy::Cotalk { n: rounds }, trial).unwrap();
        let mut remaining = s.n_units;
        for (k, r) in out.rounds.iter().enumerate() {
            let take = s.capacity(k + 1).min(remaining);
            prop_assert_eq!(r.emitted_units, take);
            prop_assert_eq!(r.new_units, take);
            remaining -= take;
        }
        prop_assert_eq!(out.duplication_pct, 0.0);
        prop_assert_eq!(out.covered_units, s.n_units - remaining);
        prop_assert_eq!(out.coverage_error.iter().filter(|&&e| e == 0).count(), out.covered_units);
    }

    #[test]
    fn gap_is_positive_inside_the_premise(
        c1 in 2usize..=30,
        share in 0.0f64..1.0,
        t_o in 0.0f64..120.0,
        w in 0.5f64..10.0,
        v_talk in 60.0f64..200.0,
        read_margin in 1.0f64..200.0,
    ) {
        let c2 = ((c1 - 1) as f64 * share) as usize;
        let s = SimScenario {
            n_units: 60,
            annotator_capacity: vec![c1, c2.max(1).min(c1 - 1)],
            t_observe_image: t_o,
            words_per_unit: w,
            v_talk,
            v_read: v_talk + read_margin,
            ..SimScenario::default()
        };
        let d = delta_t(&s, 2, 3).unwrap();
        prop_assert!(d.premise_holds());
        prop_assert!(d.seconds > 0.0, "{d:?}");
        // Independent form of the gap.
        let c = &s.annotator_capacity;
        let oracle = t_o + seconds(w * (2 * c[0] - c[1]) as f64, v_talk) - seconds(w * c[0] as f64, s.v_read);
        prop_assert!((d.seconds - oracle).abs() < 1e-9);
    }
}

#[test]
fn speed_constants() {
    assert_eq!(seconds(236.0, V_READ_WPM), 60.0);
    assert_eq!(seconds(0.0, V_TALK_WPM), 0.0);
}
