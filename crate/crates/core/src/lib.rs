//! Annotation-chain engine for sequential ("CoTalk"), parallel and single
//! caption annotation.
//!
//! - [`semantic`]: semantic units, caption trees and binary semantic vectors.
//! - [`dedup`]: one-to-one unit matching and duplication rates.
//! - [`metrics`]: entropy proxy, quality objective, efficiency.
//! - [`gateway`]: prompt templates, model and speech backends, offline mock.
//! - [`chain`]: session state machine, timing ledger and merge pipeline.
//! - [`store`]: event log, snapshots, blobs and exports.
//! - [`sim`]: Monte-Carlo and closed-form strategy models.

pub mod chain;
pub mod dedup;
pub mod gateway;
pub mod metrics;
pub mod retry;
pub mod semantic;
pub mod sim;
pub mod store;

pub use chain::{ChainEngine, ChainError, PayloadKind, SessionEvent, SessionMode, SessionState, SessionStatus, TimingEvent, TimingEventKind};
pub use dedup::{DuplicationMatcher, MatchMode};
pub use metrics::{IntrinsicReport, MetricsRow, QualityWeights};
pub use semantic::{AttributeKind, SemanticUnit, SemanticUnitTree};
pub use sim::{SimScenario, Strategy};
pub use store::{ExportRecord, FileStore};
