#![allow(dead_code)]

use cotalk_core::chain::{PayloadKind, RoundSubmission, TimingEvent, TimingEventKind};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const NOUNS: &[&str] = &[
    "car", "truck", "bench", "tree", "dog", "boat", "house", "bridge", "lamp", "bicycle", "horse", "tower", "fence",
    "umbrella", "table", "window", "door", "bird", "cloud", "rock",
];
pub const COLOURS: &[&str] = &["red", "black", "white", "green", "blue", "yellow", "grey", "brown"];
pub const AMOUNTS: &[&str] = &["a", "two", "three", "several", "many"];
pub const SIZES: &[&str] = &["big", "small", "tall", "large"];
pub const RELATIONS: &[&str] = &["next to", "behind", "in front of", "left of", "right of", "near"];

/// A short caption sentence built from the lexicons, ending in a period.
pub fn sentence(rng: &mut impl Rng) -> String {
    let noun = NOUNS.choose(rng).unwrap();
    let mut words: Vec<String> = vec![AMOUNTS.choose(rng).unwrap().to_string()];
    if rng.random_bool(0.5) {
        words.push(SIZES.choose(rng).unwrap().to_string());
    }
    if rng.random_bool(0.7) {
        words.push(COLOURS.choose(rng).unwrap().to_string());
    }
    words.push(noun.to_string());
    if rng.random_bool(0.5) {
        let other = NOUNS.choose(rng).unwrap();
        words.push(format!("{} the {other}", RELATIONS.choose(rng).unwrap()));
    }
    format!("{}.", words.join(" "))
}

pub fn caption(rng: &mut impl Rng, sentences: usize) -> String {
    (0..sentences).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
}

/// Timing events for one round starting at `start`. Reading, when given,
/// sits between observing and output.
pub fn round_events(start: f64, observe: f64, read: Option<f64>, output: f64) -> Vec<TimingEvent> {
    let mut t = start;
    let mut events = vec![TimingEvent::new(TimingEventKind::ObserveStart, t)];
    t += observe;
    events.push(TimingEvent::new(TimingEventKind::ObserveEnd, t));
    if let Some(r) = read {
        events.push(TimingEvent::new(TimingEventKind::ReadStart, t));
        t += r;
        events.push(TimingEvent::new(TimingEventKind::ReadEnd, t));
    }
    events.push(TimingEvent::new(TimingEventKind::OutputStart, t));
    t += output;
    events.push(TimingEvent::new(TimingEventKind::OutputEnd, t));
    events
}

/// Durations of one simulated round, with idle gaps that must not count.
#[derive(Debug, Clone)]
pub struct Durations {
    pub observe: f64,
    pub read: Option<f64>,
    pub output: f64,
}

pub fn events_with_gaps(start: f64, d: &Durations, gap: f64) -> Vec<TimingEvent> {
    let mut t = start;
    let mut ev = vec![TimingEvent::new(TimingEventKind::ObserveStart, t)];
    t += d.observe;
    ev.push(TimingEvent::new(TimingEventKind::ObserveEnd, t));
    t += gap;
    if let Some(r) = d.read {
        ev.push(TimingEvent::new(TimingEventKind::ReadStart, t));
        t += r;
        ev.push(TimingEvent::new(TimingEventKind::ReadEnd, t));
        t += gap;
    }
    ev.push(TimingEvent::new(TimingEventKind::OutputStart, t));
    t += d.output;
    ev.push(TimingEvent::new(TimingEventKind::OutputEnd, t));
    ev
}

pub fn submission(round_index: u32, annotator: &str, text: &str, events: Vec<TimingEvent>) -> RoundSubmission {
    RoundSubmission {
        round_index,
        annotator_id: annotator.to_string(),
        payload_kind: PayloadKind::TypedText,
        text: text.to_string(),
        events,
    }
}

/// Average-rank Spearman correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}

/// Interleaved events of a few mock sessions (all three modes), in log order.
pub fn workload(seed: u64) -> Vec<cotalk_core::store::LogRecord> {
    use cotalk_core::chain::{ChainEngine, SessionMode};
    use cotalk_core::store::LogRecord;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let engine = ChainEngine::mock();
    let modes = [
        SessionMode::Cotalk { max_rounds: Some(3) },
        SessionMode::Parallel { n: 3 },
        SessionMode::Single,
        SessionMode::Cotalk { max_rounds: None },
    ];
    let mut sessions = Vec::new();
    let mut out = Vec::new();
    for (i, mode) in modes.iter().enumerate() {
        let mut journal = Vec::new();
        let state = engine.create_session(&format!("s{i}"), "img.jpg", *mode, &mut journal).unwrap();
        out.extend(journal.into_iter().map(|event| LogRecord { session_id: state.session_id.clone(), event }));
        sessions.push(state);
    }
    let mut clock = 0.0;
    while sessions.iter().any(|s| !s.is_finalized()) {
        let open: Vec<usize> = (0..sessions.len()).filter(|&i| !sessions[i].is_finalized()).collect();
        let s = &mut sessions[*open.choose(&mut rng).unwrap()];
        let mut journal = Vec::new();
        let k = s.next_round();
        let cotalk = matches!(s.mode, SessionMode::Cotalk { .. });
        if k > s.max_rounds || (!cotalk && k > 1 && rng.random_bool(0.3)) || (cotalk && k > 2 && rng.random_bool(0.3)) {
            if engine.finalize(s, "closer", &mut journal).is_err() {
                continue;
            }
        } else {
            let read = (cotalk && k > 1).then_some(2.0);
            let count = rng.random_range(1..4);
            let text = caption(&mut rng, count);
            engine.submit_round(s, submission(k, &format!("a{k}"), &text, round_events(clock, 5.0, read, 8.0)), &mut journal).unwrap();
        }
        clock += 30.0;
        out.extend(journal.into_iter().map(|event| LogRecord { session_id: s.session_id.clone(), event }));
    }
    out
}

/// Best `(pairs, total weight)` then smallest sorted pair list, by trying
/// every injection of rows into columns (or leaving rows unmatched).
pub fn brute_force(rows: usize, cols: usize, w: &dyn Fn(usize, usize) -> Option<i64>) -> (usize, i64, Vec<(usize, usize)>) {
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        rows: usize,
        cols: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        acc: i64,
        w: &dyn Fn(usize, usize) -> Option<i64>,
        best: &mut (usize, i64, Vec<(usize, usize)>),
    ) {
        if i == rows {
            let better = (current.len(), acc) > (best.0, best.1)
                || ((current.len(), acc) == (best.0, best.1) && *current < best.2);
            if better {
                *best = (current.len(), acc, current.clone());
            }
            return;
        }
        for j in 0..cols {
            if used[j] {
                continue;
            }
            if let Some(x) = w(i, j) {
                used[j] = true;
                current.push((i, j));
                go(i + 1, rows, cols, used, current, acc + x, w, best);
                current.pop();
                used[j] = false;
            }
        }
        go(i + 1, rows, cols, used, current, acc, w, best);
    }
    let mut best = (0, 0, Vec::new());
    go(0, rows, cols, &mut vec![false; cols], &mut Vec::new(), 0, w, &mut best);
    best
}

/// Distinct-skeleton sentences: every (object, relation target) pair once.
pub fn distinct_sentences(rng: &mut impl Rng, count: usize) -> Vec<String> {
    use rand::seq::SliceRandom;
    let mut pairs: Vec<(usize, usize)> = (0..NOUNS.len())
        .flat_map(|i| (0..NOUNS.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    pairs
        .into_iter()
        .take(count)
        .map(|(i, j)| {
            let colour = COLOURS.choose(rng).unwrap();
            format!("a {colour} {} near the {}.", NOUNS[i], NOUNS[j])
        })
        .collect()
}
