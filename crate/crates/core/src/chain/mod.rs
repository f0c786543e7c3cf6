//! Annotation sessions: single, parallel and sequential chains.
//!
//! Operations never mutate a session directly. Each one derives events,
//! applies them through [`SessionState::apply`] and appends them to the
//! caller's journal, which the caller persists. A gateway failure still
//! leaves the submitted round in the journal, followed by a `MergeFailed`
//! event, so the merge can be retried without asking the annotator again.

mod ledger;
mod state;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use ledger::{round_timings, validate_round_events, LedgerEntry, RoundTimings, TimingEvent, TimingEventKind};
pub use state::{AnnotationRecord, PayloadKind, PendingRead, SessionEvent, SessionMode, SessionState, SessionStatus};

use crate::dedup::{duplication_rate_of_units, DuplicationMatcher, MatchError};
use crate::gateway::{Gateway, GatewayError, MergeKind};
use crate::metrics::IntrinsicReport;
use crate::semantic::{build_tree, SemanticUnit, SemanticUnitTree, UnitId};

pub const DEFAULT_MAX_ROUNDS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("invalid session mode: {0}")]
    InvalidMode(String),
    #[error("expected round {expected}, got round {got}")]
    OutOfOrderRound { expected: u32, got: u32 },
    #[error("session is finalized")]
    SessionClosed,
    #[error("session already has its {max} round(s)")]
    RoundLimitReached { max: u32 },
    #[error("a merge failed earlier and must be retried first")]
    MergePending,
    #[error("gateway failure (round kept, merge can be retried): {0}")]
    GatewayFailure(String),
    #[error("parallel session has {received} of {expected} rounds merged")]
    IncompleteParallelSession { received: u32, expected: u32 },
    #[error("no merged annotation to read yet")]
    NothingToRead,
    #[error("session has no rounds to finalize")]
    NothingToFinalize,
    #[error("session is not finalized")]
    SessionNotFinalized,
    #[error("timing ledger is incomplete for round {round}")]
    LedgerIncomplete { round: u32 },
    #[error("invalid timing events: {0}")]
    InvalidTiming(String),
    #[error("corrupt event sequence: {0}")]
    CorruptEvent(String),
}

impl From<GatewayError> for ChainError {
    fn from(e: GatewayError) -> Self {
        ChainError::GatewayFailure(e.to_string())
    }
}

impl From<MatchError> for ChainError {
    fn from(e: MatchError) -> Self {
        ChainError::GatewayFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub default_max_rounds: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { default_max_rounds: DEFAULT_MAX_ROUNDS }
    }
}

/// What an annotator sends for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSubmission {
    pub round_index: u32,
    pub annotator_id: String,
    pub payload_kind: PayloadKind,
    pub text: String,
    pub events: Vec<TimingEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAnnotation {
    pub round_index: u32,
    pub merged_caption: String,
    pub read_timer_token: String,
}

/// Runs session operations against a gateway and a duplication matcher.
#[derive(Debug, Clone)]
pub struct ChainEngine {
    gateway: Arc<Gateway>,
    matcher: DuplicationMatcher,
    config: ChainConfig,
}

fn emit(state: &mut SessionState, journal: &mut Vec<SessionEvent>, event: SessionEvent) -> Result<(), ChainError> {
    state.apply(&event)?;
    journal.push(event);
    Ok(())
}

fn read_token(session_id: &str, round: u32, annotator: &str, at: f64) -> String {
    let digest = Sha256::digest(format!("{session_id}\u{0}{round}\u{0}{annotator}\u{0}{}", at.to_bits()));
    hex::encode(&digest[..8])
}

/// Stamps each unit with the earliest round that produced it.
fn restamp(units: Vec<SemanticUnit>, earliest: &HashMap<UnitId, u32>) -> SemanticUnitTree {
    let units: Vec<SemanticUnit> = units
        .into_iter()
        .map(|mut u| {
            if let Some(&r) = earliest.get(&u.id()) {
                u.source_round = u.source_round.min(r);
            }
            u
        })
        .collect();
    build_tree(&units)
}

struct Processed {
    round_index: u32,
    denoised_text: String,
    units: Vec<SemanticUnit>,
    duplication_pct: Option<f64>,
}

impl ChainEngine {
    pub fn new(gateway: Arc<Gateway>, matcher: DuplicationMatcher, config: ChainConfig) -> Self {
        ChainEngine { gateway, matcher, config }
    }

    /// Offline engine: mock gateway, exact matching, default config.
    pub fn mock() -> Self {
        ChainEngine::new(Arc::new(Gateway::mock()), DuplicationMatcher::exact(), ChainConfig::default())
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn matcher(&self) -> &DuplicationMatcher {
        &self.matcher
    }

    pub fn config(&self) -> ChainConfig {
        self.config
    }

    pub fn create_session(
        &self,
        session_id: &str,
        image_ref: &str,
        mode: SessionMode,
        journal: &mut Vec<SessionEvent>,
    ) -> Result<SessionState, ChainError> {
        mode.validate()?;
        if self.config.default_max_rounds == 0 {
            return Err(ChainError::InvalidMode("default max_rounds must be at least 1".into()));
        }
        let event = SessionEvent::Created {
            session_id: session_id.to_string(),
            image_ref: image_ref.to_string(),
            mode,
            max_rounds: mode.round_cap(self.config.default_max_rounds),
            matcher: self.matcher.mode(),
        };
        let state = SessionState::from_created(&event)?;
        journal.push(event);
        Ok(state)
    }

    /// Hands the current merged caption to the next sequential annotator and
    /// starts their read timer at `at`. Fetching again returns the same timer.
    pub fn serve_prior_annotation(
        &self,
        state: &mut SessionState,
        annotator_id: &str,
        at: f64,
        journal: &mut Vec<SessionEvent>,
    ) -> Result<PriorAnnotation, ChainError> {
        match state.status {
            SessionStatus::Finalized => return Err(ChainError::SessionClosed),
            SessionStatus::AwaitingMerge => return Err(ChainError::MergePending),
            SessionStatus::Open => {}
        }
        if !matches!(state.mode, SessionMode::Cotalk { .. }) {
            return Err(ChainError::InvalidMode(format!("{} sessions do not share prior annotations", state.mode.label())));
        }
        let caption = state.merged_caption.clone().ok_or(ChainError::NothingToRead)?;
        let round_index = state.next_round();
        if let Some(pending) = &state.pending_read {
            if pending.round_index == round_index && pending.annotator_id == annotator_id {
                return Ok(PriorAnnotation { round_index, merged_caption: caption, read_timer_token: pending.token.clone() });
            }
        }
        if !at.is_finite() {
            return Err(ChainError::InvalidTiming("read start is not a finite time".into()));
        }
        let token = read_token(&state.session_id, round_index, annotator_id, at);
        emit(
            state,
            journal,
            SessionEvent::ReadStarted {
                round_index,
                annotator_id: annotator_id.to_string(),
                at,
                token: token.clone(),
            },
        )?;
        Ok(PriorAnnotation { round_index, merged_caption: caption, read_timer_token: token })
    }

    /// Stores a round and runs the gateway pipeline for it.
    ///
    /// On [`ChainError::GatewayFailure`] the round is already in the journal
    /// and the session waits in `AwaitingMerge` for [`ChainEngine::retry_merge`].
    pub fn submit_round(
        &self,
        state: &mut SessionState,
        submission: RoundSubmission,
        journal: &mut Vec<SessionEvent>,
    ) -> Result<(), ChainError> {
        match state.status {
            SessionStatus::Finalized => return Err(ChainError::SessionClosed),
            SessionStatus::AwaitingMerge => return Err(ChainError::MergePending),
            SessionStatus::Open => {}
        }
        let expected = state.next_round();
        if submission.round_index != expected {
            return Err(ChainError::OutOfOrderRound { expected, got: submission.round_index });
        }
        if expected > state.max_rounds {
            return Err(ChainError::RoundLimitReached { max: state.max_rounds });
        }

        let read_allowed = matches!(state.mode, SessionMode::Cotalk { .. }) && expected > 1;
        let mut events = submission.events.clone();
        let client_read = events
            .iter()
            .any(|e| matches!(e.kind, TimingEventKind::ReadStart | TimingEventKind::ReadEnd));
        if read_allowed && !client_read {
            // The server started the read timer; reading ends when output starts.
            if let Some(pending) = state.pending_read.as_ref().filter(|p| p.round_index == expected) {
                let output_start = events
                    .iter()
                    .find(|e| e.kind == TimingEventKind::OutputStart)
                    .map(|e| e.at)
                    .ok_or_else(|| ChainError::InvalidTiming("missing output_start".into()))?;
                events.push(TimingEvent::new(TimingEventKind::ReadStart, pending.at));
                events.push(TimingEvent::new(TimingEventKind::ReadEnd, output_start));
            }
        }
        let ordered = validate_round_events(&events, read_allowed)?;
        let span = |start: TimingEventKind, end: TimingEventKind| {
            let at = |k| ordered.iter().find(|e| e.kind == k).map(|e| e.at);
            match (at(start), at(end)) {
                (Some(s), Some(e)) => e - s,
                _ => 0.0,
            }
        };
        let timings = RoundTimings {
            observe_s: span(TimingEventKind::ObserveStart, TimingEventKind::ObserveEnd),
            read_previous_s: span(TimingEventKind::ReadStart, TimingEventKind::ReadEnd),
            output_s: span(TimingEventKind::OutputStart, TimingEventKind::OutputEnd),
        };
        let entries = ordered
            .iter()
            .map(|e| LedgerEntry { session_id: state.session_id.clone(), round_index: expected, kind: e.kind, at: e.at })
            .collect();
        let record = AnnotationRecord {
            round_index: expected,
            annotator_id: submission.annotator_id,
            payload_kind: submission.payload_kind,
            raw_text: submission.text,
            timings,
            denoised_text: None,
            extracted_units: Vec::new(),
            duplication_pct: None,
        };
        emit(state, journal, SessionEvent::RoundSubmitted { record, entries })?;
        self.process(state, journal)
    }

    /// Re-runs a failed merge. Does nothing unless the session awaits one.
    pub fn retry_merge(&self, state: &mut SessionState, journal: &mut Vec<SessionEvent>) -> Result<(), ChainError> {
        if state.status != SessionStatus::AwaitingMerge {
            return Ok(());
        }
        self.process(state, journal)
    }

    pub fn finalize(
        &self,
        state: &mut SessionState,
        declared_complete_by: &str,
        journal: &mut Vec<SessionEvent>,
    ) -> Result<(), ChainError> {
        match state.status {
            SessionStatus::Finalized => return Err(ChainError::SessionClosed),
            SessionStatus::AwaitingMerge => return Err(ChainError::MergePending),
            SessionStatus::Open => {}
        }
        if state.rounds.is_empty() {
            return Err(ChainError::NothingToFinalize);
        }
        if let SessionMode::Parallel { n } = state.mode {
            if state.merged_through < n {
                return Err(ChainError::IncompleteParallelSession { received: state.rounds.len() as u32, expected: n });
            }
        }
        emit(state, journal, SessionEvent::Finalized { by: declared_complete_by.to_string() })
    }

    fn process(&self, state: &mut SessionState, journal: &mut Vec<SessionEvent>) -> Result<(), ChainError> {
        let outcome = match state.mode {
            SessionMode::Parallel { n } if (state.rounds.len() as u32) < n => return Ok(()),
            SessionMode::Parallel { .. } => self.merge_parallel(state),
            SessionMode::Single | SessionMode::Cotalk { .. } => self.merge_next_sequential(state),
        };
        let (processed, caption, tree) = match outcome {
            Ok(parts) => parts,
            Err(error) => {
                let message = error.to_string();
                tracing::warn!(session = %state.session_id, %message, "merge failed, round kept for retry");
                emit(
                    state,
                    journal,
                    SessionEvent::MergeFailed { round_index: state.rounds.len() as u32, message },
                )?;
                return Err(error);
            }
        };
        let through_round = state.rounds.len() as u32;
        for p in processed {
            emit(
                state,
                journal,
                SessionEvent::RoundProcessed {
                    round_index: p.round_index,
                    denoised_text: p.denoised_text,
                    units: p.units,
                    duplication_pct: p.duplication_pct,
                },
            )?;
        }
        emit(state, journal, SessionEvent::Merged { through_round, caption, tree })?;

        let auto_finalize = match state.mode {
            SessionMode::Single => true,
            SessionMode::Cotalk { .. } => through_round >= state.max_rounds,
            SessionMode::Parallel { .. } => false,
        };
        if auto_finalize {
            let by = state.rounds.last().map(|r| r.annotator_id.clone()).unwrap_or_default();
            emit(state, journal, SessionEvent::Finalized { by })?;
        }
        Ok(())
    }

    fn units_of(&self, text: &str, round: u32) -> Result<Vec<SemanticUnit>, ChainError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.gateway.extract_units(text, round)?)
    }

    /// Folds every unmerged round into the merged state, one at a time.
    fn merge_next_sequential(
        &self,
        state: &SessionState,
    ) -> Result<(Vec<Processed>, String, SemanticUnitTree), ChainError> {
        let mut caption = state.merged_caption.clone().unwrap_or_default();
        let mut tree = state.merged_tree.clone();
        let mut processed = Vec::new();
        for record in &state.rounds[state.merged_through as usize..] {
            let round = record.round_index;
            let denoised = self.gateway.denoise(&record.raw_text)?;
            let units = self.units_of(&denoised, round)?;
            let duplication_pct = if round == 1 {
                None
            } else {
                Some(duplication_rate_of_units(&tree.units(), &units, &self.matcher)?)
            };
            caption = if round == 1 {
                denoised.clone()
            } else {
                self.gateway.merge_captions(MergeKind::Sequential, &[caption, denoised.clone()])?
            };
            let earliest: HashMap<UnitId, u32> = tree.units().into_iter().map(|u| (u.id(), u.source_round)).collect();
            tree = restamp(self.units_of(&caption, round)?, &earliest);
            processed.push(Processed { round_index: round, denoised_text: denoised, units, duplication_pct });
        }
        Ok((processed, caption, tree))
    }

    /// Merges all parallel rounds at once. Round k's duplication is measured
    /// against the union of rounds 1..k-1.
    fn merge_parallel(&self, state: &SessionState) -> Result<(Vec<Processed>, String, SemanticUnitTree), ChainError> {
        let mut processed: Vec<Processed> = Vec::new();
        let mut seen: Vec<SemanticUnit> = Vec::new();
        let mut earliest: HashMap<UnitId, u32> = HashMap::new();
        for record in &state.rounds {
            let round = record.round_index;
            let denoised = self.gateway.denoise(&record.raw_text)?;
            let units = self.units_of(&denoised, round)?;
            let duplication_pct = if round == 1 {
                None
            } else {
                Some(duplication_rate_of_units(&build_tree(&seen).units(), &units, &self.matcher)?)
            };
            for u in &units {
                earliest.entry(u.id()).or_insert(round);
            }
            seen.extend(units.iter().cloned());
            processed.push(Processed { round_index: round, denoised_text: denoised, units, duplication_pct });
        }
        let captions: Vec<String> = processed.iter().map(|p| p.denoised_text.clone()).collect();
        let caption = self.gateway.merge_captions(MergeKind::Parallel, &captions)?;
        let last = state.rounds.len() as u32;
        let tree = restamp(self.units_of(&caption, last)?, &earliest);
        Ok((processed, caption, tree))
    }
}

/// Sum of observe, read and output durations over all rounds, rebuilt from the ledger.
///
/// Single: `T_in + T_out`. Parallel: `sum_i (T_in_i + T_out_i)`. Sequential:
/// `sum_i (T_in_i + T_read_i + T_out_i)` with no reading in round 1.
pub fn total_time(state: &SessionState) -> Result<f64, ChainError> {
    let timings = round_timings(&state.ledger, &state.session_id)?;
    let mut total = 0.0;
    for round in 1..=state.rounds.len() as u32 {
        total += timings.get(&round).ok_or(ChainError::LedgerIncomplete { round })?.total();
    }
    Ok(total)
}

/// Mean per-round duplication over rounds 2.., or 0 with a single round.
pub fn mean_duplication(state: &SessionState) -> f64 {
    let rates: Vec<f64> = state.rounds.iter().filter_map(|r| r.duplication_pct).collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

pub fn intrinsic_report(state: &SessionState) -> Result<IntrinsicReport, ChainError> {
    if !state.is_finalized() {
        return Err(ChainError::SessionNotFinalized);
    }
    Ok(IntrinsicReport::new(state.merged_tree.unit_count(), total_time(state)?, mean_duplication(state)))
}
