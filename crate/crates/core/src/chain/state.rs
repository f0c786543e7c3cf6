use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dedup::MatchMode;
use crate::semantic::{SemanticUnit, SemanticUnitTree};

use super::ledger::{LedgerEntry, RoundTimings};
use super::ChainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionMode {
    Single,
    Parallel {
        n: u32,
    },
    Cotalk {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_rounds: Option<u32>,
    },
}

impl SessionMode {
    pub fn validate(&self) -> Result<(), ChainError> {
        match *self {
            SessionMode::Parallel { n } if n < 2 => {
                Err(ChainError::InvalidMode(format!("parallel sessions need at least 2 annotators, got {n}")))
            }
            SessionMode::Cotalk { max_rounds: Some(0) } => {
                Err(ChainError::InvalidMode("cotalk max_rounds must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SessionMode::Single => "single",
            SessionMode::Parallel { .. } => "parallel",
            SessionMode::Cotalk { .. } => "cotalk",
        }
    }

    /// Round cap: 1, n, or the sequential cap falling back to `default_max_rounds`.
    pub fn round_cap(&self, default_max_rounds: u32) -> u32 {
        match *self {
            SessionMode::Single => 1,
            SessionMode::Parallel { n } => n,
            SessionMode::Cotalk { max_rounds } => max_rounds.unwrap_or(default_max_rounds),
        }
    }
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionMode::Single => f.write_str("single"),
            SessionMode::Parallel { n } => write!(f, "parallel({n})"),
            SessionMode::Cotalk { max_rounds: Some(m) } => write!(f, "cotalk(max {m})"),
            SessionMode::Cotalk { max_rounds: None } => f.write_str("cotalk"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    SpeechTranscript,
    TypedText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub round_index: u32,
    pub annotator_id: String,
    pub payload_kind: PayloadKind,
    pub raw_text: String,
    pub timings: RoundTimings,
    /// Set once the round has gone through the gateway.
    pub denoised_text: Option<String>,
    pub extracted_units: Vec<SemanticUnit>,
    /// Share of this round's units already present before it; absent for the first round.
    pub duplication_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    AwaitingMerge,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRead {
    pub round_index: u32,
    pub annotator_id: String,
    pub at: f64,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub image_ref: String,
    pub mode: SessionMode,
    pub max_rounds: u32,
    pub matcher: MatchMode,
    pub rounds: Vec<AnnotationRecord>,
    pub merged_caption: Option<String>,
    pub merged_tree: SemanticUnitTree,
    /// Rounds folded into the merged state.
    pub merged_through: u32,
    pub status: SessionStatus,
    pub ledger: Vec<LedgerEntry>,
    pub pending_read: Option<PendingRead>,
    /// Merges that lowered the unit count.
    pub unit_regressions: u32,
    pub last_error: Option<String>,
    pub finalized_by: Option<String>,
}

/// Every state change, in the order it happened. Gateway outputs are part of
/// the events, so replay never calls a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        image_ref: String,
        mode: SessionMode,
        max_rounds: u32,
        matcher: MatchMode,
    },
    ReadStarted {
        round_index: u32,
        annotator_id: String,
        at: f64,
        token: String,
    },
    RoundSubmitted {
        record: AnnotationRecord,
        entries: Vec<LedgerEntry>,
    },
    RoundProcessed {
        round_index: u32,
        denoised_text: String,
        units: Vec<SemanticUnit>,
        duplication_pct: Option<f64>,
    },
    Merged {
        through_round: u32,
        caption: String,
        tree: SemanticUnitTree,
    },
    MergeFailed {
        round_index: u32,
        message: String,
    },
    Finalized {
        by: String,
    },
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::Created { .. } => "created",
            SessionEvent::ReadStarted { .. } => "read_started",
            SessionEvent::RoundSubmitted { .. } => "round_submitted",
            SessionEvent::RoundProcessed { .. } => "round_processed",
            SessionEvent::Merged { .. } => "merged",
            SessionEvent::MergeFailed { .. } => "merge_failed",
            SessionEvent::Finalized { .. } => "finalized",
        }
    }
}

fn corrupt(event: &SessionEvent, why: &str) -> ChainError {
    ChainError::CorruptEvent(format!("{} event {why}", event.name()))
}

impl SessionState {
    /// State right after a `Created` event.
    pub fn from_created(event: &SessionEvent) -> Result<Self, ChainError> {
        match event {
            SessionEvent::Created { session_id, image_ref, mode, max_rounds, matcher } => Ok(SessionState {
                session_id: session_id.clone(),
                image_ref: image_ref.clone(),
                mode: *mode,
                max_rounds: *max_rounds,
                matcher: *matcher,
                rounds: Vec::new(),
                merged_caption: None,
                merged_tree: SemanticUnitTree::empty(),
                merged_through: 0,
                status: SessionStatus::Open,
                ledger: Vec::new(),
                pending_read: None,
                unit_regressions: 0,
                last_error: None,
                finalized_by: None,
            }),
            other => Err(corrupt(other, "cannot start a session")),
        }
    }

    /// Folds one event into the state. The only place state changes.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), ChainError> {
        if self.status == SessionStatus::Finalized {
            return Err(corrupt(event, "follows finalization"));
        }
        match event {
            SessionEvent::Created { .. } => return Err(corrupt(event, "repeated")),
            SessionEvent::ReadStarted { round_index, annotator_id, at, token } => {
                if *round_index as usize != self.rounds.len() + 1 {
                    return Err(corrupt(event, "names the wrong round"));
                }
                self.pending_read = Some(PendingRead {
                    round_index: *round_index,
                    annotator_id: annotator_id.clone(),
                    at: *at,
                    token: token.clone(),
                });
            }
            SessionEvent::RoundSubmitted { record, entries } => {
                if record.round_index as usize != self.rounds.len() + 1 || record.round_index > self.max_rounds {
                    return Err(corrupt(event, "is out of order"));
                }
                self.rounds.push(record.clone());
                self.ledger.extend(entries.iter().cloned());
                self.pending_read = None;
            }
            SessionEvent::RoundProcessed { round_index, denoised_text, units, duplication_pct } => {
                let record = self
                    .rounds
                    .get_mut((*round_index as usize).wrapping_sub(1))
                    .ok_or_else(|| corrupt(event, "names an unknown round"))?;
                record.denoised_text = Some(denoised_text.clone());
                record.extracted_units = units.clone();
                record.duplication_pct = *duplication_pct;
            }
            SessionEvent::Merged { through_round, caption, tree } => {
                if *through_round as usize > self.rounds.len() || *through_round <= self.merged_through {
                    return Err(corrupt(event, "names an impossible round"));
                }
                if tree.unit_count() < self.merged_tree.unit_count() {
                    self.unit_regressions += 1;
                }
                self.merged_caption = Some(caption.clone());
                self.merged_tree = tree.clone();
                self.merged_through = *through_round;
                self.status = SessionStatus::Open;
                self.last_error = None;
            }
            SessionEvent::MergeFailed { message, .. } => {
                self.status = SessionStatus::AwaitingMerge;
                self.last_error = Some(message.clone());
            }
            SessionEvent::Finalized { by } => {
                if self.rounds.is_empty() {
                    return Err(corrupt(event, "finalizes an empty session"));
                }
                self.status = SessionStatus::Finalized;
                self.finalized_by = Some(by.clone());
                self.pending_read = None;
            }
        }
        Ok(())
    }

    /// Rebuilds a session from its events.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Self, ChainError> {
        let mut iter = events.into_iter();
        let first = iter.next().ok_or_else(|| ChainError::CorruptEvent("no events".into()))?;
        let mut state = SessionState::from_created(first)?;
        for event in iter {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn is_finalized(&self) -> bool {
        self.status == SessionStatus::Finalized
    }

    pub fn next_round(&self) -> u32 {
        self.rounds.len() as u32 + 1
    }
}
