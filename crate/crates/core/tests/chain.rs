mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use cotalk_core::chain::{
    intrinsic_report, total_time, ChainConfig, ChainEngine, ChainError, SessionEvent, SessionMode, SessionState,
    SessionStatus, TimingEvent, TimingEventKind,
};
use cotalk_core::dedup::DuplicationMatcher;
use cotalk_core::gateway::{
    BackendError, BackendReply, Gateway, GatewayRequest, MockBackend, MockSpeech, ModelBackend, RenderedPrompt,
    TemplateId,
};
use cotalk_core::retry::RetryPolicy;
use common::{events_with_gaps, round_events, submission, Durations};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_session(engine: &ChainEngine, mode: SessionMode, rounds: &[Durations], captions: &[String]) -> SessionState {
    let mut journal = Vec::new();
    let mut s = engine.create_session("timed", "img", mode, &mut journal).unwrap();
    let mut clock = 1000.0;
    for (k, d) in rounds.iter().enumerate() {
        let ev = events_with_gaps(clock, d, 0.5);
        clock = ev.last().unwrap().at + 3.0;
        engine.submit_round(&mut s, submission(k as u32 + 1, &format!("a{k}"), &captions[k], ev), &mut journal).unwrap();
    }
    if !s.is_finalized() {
        engine.finalize(&mut s, "a0", &mut journal).unwrap();
    }
    s
}

fn random_durations(rng: &mut ChaCha8Rng, n: usize, with_read: bool) -> Vec<Durations> {
    (0..n)
        .map(|k| Durations {
            observe: rng.random_range(0.5..60.0),
            read: (with_read && k > 0).then(|| rng.random_range(0.5..40.0)),
            output: rng.random_range(0.5..90.0),
        })
        .collect()
}

#[test]
fn ledger_totals_match_closed_forms() {
    let engine = ChainEngine::mock();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let captions: Vec<String> = (0..4).map(|_| common::caption(&mut rng, 2)).collect();
        let single = random_durations(&mut rng, 1, false);
        let s = run_session(&engine, SessionMode::Single, &single, &captions);
        let expected = single[0].observe + single[0].output;
        assert!((total_time(&s).unwrap() - expected).abs() < 1e-6, "single trial {trial}");

        let n = rng.random_range(2..=4);
        let par = random_durations(&mut rng, n, false);
        let s = run_session(&engine, SessionMode::Parallel { n: n as u32 }, &par, &captions);
        let expected: f64 = par.iter().map(|d| d.observe + d.output).sum();
        assert!((total_time(&s).unwrap() - expected).abs() < 1e-6, "parallel trial {trial}");

        let seq = random_durations(&mut rng, n, true);
        let s = run_session(&engine, SessionMode::Cotalk { max_rounds: Some(n as u32) }, &seq, &captions);
        let expected: f64 = seq.iter().map(|d| d.observe + d.read.unwrap_or(0.0) + d.output).sum();
        assert!((total_time(&s).unwrap() - expected).abs() < 1e-6, "cotalk trial {trial}");
    }
}

#[test]
fn two_round_session_end_to_end() {
    let engine = ChainEngine::mock();
    let mut journal = Vec::new();
    let mut s = engine.create_session("e2e", "img", SessionMode::Cotalk { max_rounds: None }, &mut journal).unwrap();
    engine
        .submit_round(&mut s, submission(1, "ann1", "then a black car on a road", round_events(0.0, 20.0, None, 30.0)), &mut journal)
        .unwrap();
    let prior = engine.serve_prior_annotation(&mut s, "ann2", 60.0, &mut journal).unwrap();
    assert_eq!(prior.merged_caption, "a black car on a road");
    engine
        .submit_round(&mut s, submission(2, "ann2", "two trees left of the car", round_events(40.0, 20.0, Some(10.0), 25.0)), &mut journal)
        .unwrap();
    engine.finalize(&mut s, "ann2", &mut journal).unwrap();
    let report = intrinsic_report(&s).unwrap();
    assert!(report.unit_count > 0);
    assert!(report.speed.unwrap() > 0.0);
    assert_eq!(report.total_time_s, 105.0);
    assert_eq!(SessionState::replay(&journal).unwrap(), s);
}

#[test]
fn server_read_timer_ends_at_output_start() {
    let engine = ChainEngine::mock();
    let mut journal = Vec::new();
    let mut s = engine.create_session("r", "img", SessionMode::Cotalk { max_rounds: Some(3) }, &mut journal).unwrap();
    engine.submit_round(&mut s, submission(1, "a", "a red car.", round_events(0.0, 10.0, None, 10.0)), &mut journal).unwrap();
    let first = engine.serve_prior_annotation(&mut s, "b", 100.0, &mut journal).unwrap();
    let again = engine.serve_prior_annotation(&mut s, "b", 105.0, &mut journal).unwrap();
    assert_eq!(first.read_timer_token, again.read_timer_token);
    // Observe 90..100, then output 112..120: the read spans 100..112.
    let ev = vec![
        TimingEvent::new(TimingEventKind::ObserveStart, 90.0),
        TimingEvent::new(TimingEventKind::ObserveEnd, 100.0),
        TimingEvent::new(TimingEventKind::OutputStart, 112.0),
        TimingEvent::new(TimingEventKind::OutputEnd, 120.0),
    ];
    engine.submit_round(&mut s, submission(2, "b", "two trees.", ev), &mut journal).unwrap();
    assert_eq!(s.rounds[1].timings.read_previous_s, 12.0);
    assert_eq!(total_time(&s).unwrap(), 20.0 + 10.0 + 12.0 + 8.0);
}

#[test]
fn ordering_and_mode_rules() {
    let engine = ChainEngine::mock();
    let mut journal = Vec::new();
    let mut s = engine.create_session("o", "img", SessionMode::Cotalk { max_rounds: Some(2) }, &mut journal).unwrap();
    let ev = || round_events(0.0, 5.0, None, 5.0);
    assert_eq!(
        engine.submit_round(&mut s, submission(2, "a", "a car.", ev()), &mut journal),
        Err(ChainError::OutOfOrderRound { expected: 1, got: 2 })
    );
    let bad = vec![
        TimingEvent::new(TimingEventKind::ObserveStart, 5.0),
        TimingEvent::new(TimingEventKind::ObserveEnd, 4.0),
        TimingEvent::new(TimingEventKind::OutputStart, 6.0),
        TimingEvent::new(TimingEventKind::OutputEnd, 7.0),
    ];
    assert!(matches!(engine.submit_round(&mut s, submission(1, "a", "a car.", bad), &mut journal), Err(ChainError::InvalidTiming(_))));
    engine.submit_round(&mut s, submission(1, "a", "a car.", ev()), &mut journal).unwrap();
    engine.submit_round(&mut s, submission(2, "b", "a red car.", round_events(20.0, 5.0, Some(2.0), 5.0)), &mut journal).unwrap();
    assert!(s.is_finalized(), "sessions close at their round cap");
    assert_eq!(engine.submit_round(&mut s, submission(3, "c", "x.", ev()), &mut journal), Err(ChainError::SessionClosed));

    let mut p = engine.create_session("p", "img", SessionMode::Parallel { n: 2 }, &mut journal).unwrap();
    assert!(matches!(engine.serve_prior_annotation(&mut p, "a", 0.0, &mut journal), Err(ChainError::InvalidMode(_))));
    let with_read = round_events(0.0, 5.0, Some(1.0), 5.0);
    assert!(matches!(engine.submit_round(&mut p, submission(1, "a", "a car.", with_read), &mut journal), Err(ChainError::InvalidTiming(_))));
}

/// Passes through to the mock until switched off.
struct Switchable {
    up: AtomicBool,
}

impl ModelBackend for Switchable {
    fn complete(&self, request: &GatewayRequest, prompt: &RenderedPrompt) -> Result<BackendReply, BackendError> {
        if request.template_id == TemplateId::MergeSequential && !self.up.load(Ordering::SeqCst) {
            return Err(BackendError::Transient("connection reset".into()));
        }
        MockBackend.complete(request, prompt)
    }
}

#[test]
fn gateway_outage_keeps_the_round_and_retries() {
    let backend = Arc::new(Switchable { up: AtomicBool::new(true) });
    let gateway = Gateway::new(backend.clone(), Arc::new(MockSpeech)).with_retry(RetryPolicy::immediate(2));
    let engine = ChainEngine::new(Arc::new(gateway), DuplicationMatcher::exact(), ChainConfig::default());
    let mut journal = Vec::new();
    let mut s = engine.create_session("g", "img", SessionMode::Cotalk { max_rounds: None }, &mut journal).unwrap();
    engine.submit_round(&mut s, submission(1, "a", "a red car.", round_events(0.0, 5.0, None, 5.0)), &mut journal).unwrap();

    backend.up.store(false, Ordering::SeqCst);
    let err = engine
        .submit_round(&mut s, submission(2, "b", "two trees.", round_events(20.0, 5.0, Some(1.0), 5.0)), &mut journal)
        .unwrap_err();
    assert!(matches!(err, ChainError::GatewayFailure(_)));
    assert_eq!(s.status, SessionStatus::AwaitingMerge);
    assert_eq!(s.rounds.len(), 2);
    assert!(matches!(journal.last(), Some(SessionEvent::MergeFailed { .. })));
    assert_eq!(engine.finalize(&mut s, "b", &mut journal), Err(ChainError::MergePending));
    assert_eq!(SessionState::replay(&journal).unwrap(), s);

    backend.up.store(true, Ordering::SeqCst);
    engine.retry_merge(&mut s, &mut journal).unwrap();
    assert_eq!(s.status, SessionStatus::Open);
    assert_eq!(s.merged_through, 2);
    assert!(s.merged_caption.as_deref().unwrap().contains("two trees"));
    assert_eq!(SessionState::replay(&journal).unwrap(), s);
}

#[test]
fn parallel_duplication_is_against_earlier_rounds() {
    let engine = ChainEngine::mock();
    let mut journal = Vec::new();
    let mut s = engine.create_session("d", "img", SessionMode::Parallel { n: 3 }, &mut journal).unwrap();
    let texts = ["a red car. two trees.", "a red car. a dog.", "a dog. two trees. a bench."];
    for (k, t) in texts.iter().enumerate() {
        engine.submit_round(&mut s, submission(k as u32 + 1, "x", t, round_events(0.0, 5.0, None, 5.0)), &mut journal).unwrap();
    }
    let dups: Vec<Option<f64>> = s.rounds.iter().map(|r| r.duplication_pct).collect();
    assert_eq!(dups[0], None);
    assert_eq!(dups[1], Some(50.0));
    assert!((dups[2].unwrap() - 200.0 / 3.0).abs() < 1e-9);
    engine.finalize(&mut s, "x", &mut journal).unwrap();
    assert!((intrinsic_report(&s).unwrap().duplication_pct - (50.0 + 200.0 / 3.0) / 2.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn replay_reproduces_any_session(seed in any::<u64>(), rounds in 1u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let engine = ChainEngine::mock();
        let mut journal = Vec::new();
        let mut s = engine.create_session("p", "img", SessionMode::Cotalk { max_rounds: Some(rounds) }, &mut journal).unwrap();
        let mut clock = 0.0;
        for k in 1..=rounds {
            if k > 1 && rng.random_bool(0.5) {
                engine.serve_prior_annotation(&mut s, "x", clock + 4.0, &mut journal).unwrap();
            }
            let ev = if s.pending_read.is_some() {
                events_with_gaps(clock, &Durations { observe: 4.0, read: None, output: 6.0 }, 2.0)
            } else {
                round_events(clock, 4.0, (k > 1).then_some(3.0), 6.0)
            };
            clock += 20.0;
            let count = rng.random_range(1..4);
            let text = common::caption(&mut rng, count);
            engine.submit_round(&mut s, submission(k, "x", &text, ev), &mut journal).unwrap();
        }
        prop_assert!(s.is_finalized());
        let replayed = SessionState::replay(&journal).unwrap();
        prop_assert_eq!(&replayed, &s);
        let wire: Vec<SessionEvent> = journal.iter().map(|e| serde_json::from_str(&serde_json::to_string(e).unwrap()).unwrap()).collect();
        prop_assert_eq!(SessionState::replay(&wire).unwrap(), s);
    }
}
