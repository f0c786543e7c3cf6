//! Append-only timing events and the per-round durations they imply.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ChainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingEventKind {
    ObserveStart,
    ObserveEnd,
    ReadStart,
    ReadEnd,
    OutputStart,
    OutputEnd,
}

impl TimingEventKind {
    pub const ALL: [TimingEventKind; 6] = [
        TimingEventKind::ObserveStart,
        TimingEventKind::ObserveEnd,
        TimingEventKind::ReadStart,
        TimingEventKind::ReadEnd,
        TimingEventKind::OutputStart,
        TimingEventKind::OutputEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TimingEventKind::ObserveStart => "observe_start",
            TimingEventKind::ObserveEnd => "observe_end",
            TimingEventKind::ReadStart => "read_start",
            TimingEventKind::ReadEnd => "read_end",
            TimingEventKind::OutputStart => "output_start",
            TimingEventKind::OutputEnd => "output_end",
        }
    }
}

impl fmt::Display for TimingEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A client-side timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingEvent {
    pub kind: TimingEventKind,
    pub at: f64,
}

impl TimingEvent {
    pub fn new(kind: TimingEventKind, at: f64) -> Self {
        TimingEvent { kind, at }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub session_id: String,
    pub round_index: u32,
    pub kind: TimingEventKind,
    pub at: f64,
}

/// Durations of one round in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundTimings {
    pub observe_s: f64,
    pub read_previous_s: f64,
    pub output_s: f64,
}

impl RoundTimings {
    pub fn total(&self) -> f64 {
        self.observe_s + self.read_previous_s + self.output_s
    }
}

/// Checks a round's events and returns them in canonical order.
///
/// Each kind may appear once. Observe and output pairs are required, the
/// read pair only where reading is allowed, and the sequence must satisfy
/// `observe_start < observe_end <= read_start < read_end <= output_start < output_end`.
pub fn validate_round_events(events: &[TimingEvent], read_allowed: bool) -> Result<Vec<TimingEvent>, ChainError> {
    let mut by_kind: BTreeMap<TimingEventKind, f64> = BTreeMap::new();
    for event in events {
        if !event.at.is_finite() {
            return Err(ChainError::InvalidTiming(format!("{} is not a finite time", event.kind)));
        }
        if by_kind.insert(event.kind, event.at).is_some() {
            return Err(ChainError::InvalidTiming(format!("{} given more than once", event.kind)));
        }
    }
    let has_read = by_kind.contains_key(&TimingEventKind::ReadStart) || by_kind.contains_key(&TimingEventKind::ReadEnd);
    if has_read && !read_allowed {
        return Err(ChainError::InvalidTiming("read events are only valid after round 1 of a sequential session".into()));
    }
    let mut required = vec![TimingEventKind::ObserveStart, TimingEventKind::ObserveEnd];
    if has_read {
        required.extend([TimingEventKind::ReadStart, TimingEventKind::ReadEnd]);
    }
    required.extend([TimingEventKind::OutputStart, TimingEventKind::OutputEnd]);
    for kind in &required {
        if !by_kind.contains_key(kind) {
            return Err(ChainError::InvalidTiming(format!("missing {kind}")));
        }
    }
    let ordered: Vec<TimingEvent> = required.iter().map(|&k| TimingEvent::new(k, by_kind[&k])).collect();
    for pair in ordered.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        // Starts strictly precede their end; an end may touch the next start.
        let strict = matches!(
            a.kind,
            TimingEventKind::ObserveStart | TimingEventKind::ReadStart | TimingEventKind::OutputStart
        );
        if (strict && a.at >= b.at) || (!strict && a.at > b.at) {
            return Err(ChainError::InvalidTiming(format!(
                "{} at {} must {} {} at {}",
                a.kind,
                a.at,
                if strict { "precede" } else { "not follow" },
                b.kind,
                b.at
            )));
        }
    }
    Ok(ordered)
}

/// Durations of every round present in `entries` for one session.
pub fn round_timings(entries: &[LedgerEntry], session_id: &str) -> Result<BTreeMap<u32, RoundTimings>, ChainError> {
    let mut stamps: BTreeMap<u32, BTreeMap<TimingEventKind, f64>> = BTreeMap::new();
    for entry in entries.iter().filter(|e| e.session_id == session_id) {
        stamps.entry(entry.round_index).or_default().insert(entry.kind, entry.at);
    }
    stamps
        .into_iter()
        .map(|(round, kinds)| {
            let span = |start: TimingEventKind, end: TimingEventKind, required: bool| -> Result<f64, ChainError> {
                match (kinds.get(&start), kinds.get(&end)) {
                    (Some(s), Some(e)) => Ok(e - s),
                    (None, None) if !required => Ok(0.0),
                    _ => Err(ChainError::LedgerIncomplete { round }),
                }
            };
            let timings = RoundTimings {
                observe_s: span(TimingEventKind::ObserveStart, TimingEventKind::ObserveEnd, true)?,
                read_previous_s: span(TimingEventKind::ReadStart, TimingEventKind::ReadEnd, false)?,
                output_s: span(TimingEventKind::OutputStart, TimingEventKind::OutputEnd, true)?,
            };
            Ok((round, timings))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use TimingEventKind::*;

    fn events(spec: &[(TimingEventKind, f64)]) -> Vec<TimingEvent> {
        spec.iter().map(|&(k, at)| TimingEvent::new(k, at)).collect()
    }

    #[test]
    fn accepts_touching_boundaries() {
        let ev = events(&[(OutputEnd, 9.0), (ObserveStart, 0.0), (ObserveEnd, 2.0), (ReadStart, 2.0), (ReadEnd, 4.0), (OutputStart, 4.0)]);
        let ordered = validate_round_events(&ev, true).unwrap();
        assert_eq!(ordered[0].kind, ObserveStart);
        assert_eq!(ordered[5].kind, OutputEnd);
    }

    #[test]
    fn rejects_bad_sequences() {
        let zero_output = events(&[(ObserveStart, 0.0), (ObserveEnd, 1.0), (OutputStart, 2.0), (OutputEnd, 2.0)]);
        assert!(validate_round_events(&zero_output, false).is_err());
        let backwards = events(&[(ObserveStart, 0.0), (ObserveEnd, 3.0), (OutputStart, 2.0), (OutputEnd, 4.0)]);
        assert!(validate_round_events(&backwards, false).is_err());
        let read_in_round_one = events(&[(ObserveStart, 0.0), (ObserveEnd, 1.0), (ReadStart, 1.0), (ReadEnd, 2.0), (OutputStart, 2.0), (OutputEnd, 3.0)]);
        assert!(validate_round_events(&read_in_round_one, false).is_err());
        let half_read = events(&[(ObserveStart, 0.0), (ObserveEnd, 1.0), (ReadStart, 1.0), (OutputStart, 2.0), (OutputEnd, 3.0)]);
        assert!(validate_round_events(&half_read, true).is_err());
        let missing = events(&[(ObserveStart, 0.0), (ObserveEnd, 1.0)]);
        assert!(validate_round_events(&missing, false).is_err());
    }

    #[test]
    fn reconstructs_durations_per_round() {
        let entry = |round, kind, at| LedgerEntry { session_id: "s".into(), round_index: round, kind, at };
        let entries = vec![
            entry(1, ObserveStart, 0.0),
            entry(1, ObserveEnd, 20.0),
            entry(1, OutputStart, 20.0),
            entry(1, OutputEnd, 80.0),
            LedgerEntry { session_id: "other".into(), round_index: 1, kind: ObserveStart, at: 5.0 },
        ];
        let timings = round_timings(&entries, "s").unwrap();
        assert_eq!(timings[&1].total(), 80.0);
        assert!(matches!(round_timings(&entries, "other"), Err(ChainError::LedgerIncomplete { round: 1 })));
    }
}
