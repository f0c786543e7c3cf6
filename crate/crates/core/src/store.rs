//! File-backed persistence: an append-only JSONL event log, per-session
//! snapshots, content-addressed blobs, and dataset/metrics exports.
//!
//! Layout under the data directory:
//!
//! ```text
//! events.jsonl            one {"session_id", "event"} record per line
//! snapshots/<id>.json     state after the first `events_applied` events of a session
//! blobs/<sha256>          uploaded audio
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{intrinsic_report, total_time, ChainError, SessionEvent, SessionState};
use crate::metrics::{efficiency, MetricsRow};
use crate::semantic::SemanticUnitTree;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const BLOB_DIR: &str = "blobs";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt event log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("corrupt snapshot {path}: {message}")]
    CorruptSnapshot { path: PathBuf, message: String },
    #[error("blob {0} not found")]
    BlobNotFound(String),
    #[error("invalid blob key {0:?}")]
    InvalidBlobKey(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session_id: String,
    pub event: SessionEvent,
}

/// A session together with the number of its events in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSession {
    pub state: SessionState,
    pub events: u64,
}

pub type Sessions = BTreeMap<String, TrackedSession>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub events_applied: u64,
    pub state: SessionState,
}

/// SHA-256 of the canonical JSON serialization of a session.
pub fn state_hash(state: &SessionState) -> String {
    let bytes = serde_json::to_vec(state).expect("session state always serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Hash over every session hash, in session-id order.
pub fn sessions_hash(sessions: &Sessions) -> String {
    let mut hasher = Sha256::new();
    for (id, tracked) in sessions {
        hasher.update(id.as_bytes());
        hasher.update([0]);
        hasher.update(state_hash(&tracked.state).as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn encode_record(session_id: &str, event: &SessionEvent) -> String {
    let record = LogRecord { session_id: session_id.to_string(), event: event.clone() };
    let mut line = serde_json::to_string(&record).expect("log records always serialize");
    line.push('\n');
    line
}

/// Applies one record. Nothing changes when it fails.
pub fn apply_record(sessions: &mut Sessions, record: &LogRecord) -> Result<(), String> {
    match sessions.get_mut(&record.session_id) {
        Some(tracked) => {
            tracked.state.apply(&record.event).map_err(|e| e.to_string())?;
            tracked.events += 1;
        }
        None => {
            let state = SessionState::from_created(&record.event).map_err(|e| e.to_string())?;
            if state.session_id != record.session_id {
                return Err(format!("record for {} creates session {}", record.session_id, state.session_id));
            }
            sessions.insert(record.session_id.clone(), TrackedSession { state, events: 1 });
        }
    }
    Ok(())
}

/// Result of replaying as much of a log as is readable.
#[derive(Debug)]
pub struct Replay {
    pub sessions: Sessions,
    /// First unreadable line, if any. `sessions` holds the state before it.
    pub error: Option<StoreError>,
    /// Byte length of the readable prefix.
    pub valid_bytes: u64,
    /// True when only blank lines follow the bad line.
    pub error_is_tail: bool,
}

/// Replays records until the first bad line.
pub fn replay_prefix(reader: impl io::Read) -> Replay {
    replay_with(reader, &BTreeMap::new())
}

/// Replays a whole log; any bad line is an error.
pub fn replay(reader: impl io::Read) -> Result<Sessions, StoreError> {
    let outcome = replay_prefix(reader);
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.sessions),
    }
}

pub fn replay_str(text: &str) -> Result<Sessions, StoreError> {
    replay(text.as_bytes())
}

fn replay_with(reader: impl io::Read, snapshots: &BTreeMap<String, Snapshot>) -> Replay {
    let mut reader = BufReader::new(reader);
    let mut sessions = Sessions::new();
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    let mut valid_bytes = 0u64;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    let mut error: Option<StoreError> = None;
    loop {
        buf.clear();
        let read = match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                error = Some(StoreError::Io(e));
                break;
            }
        };
        line_no += 1;
        if error.is_some() {
            if !buf.iter().all(u8::is_ascii_whitespace) {
                return Replay { sessions, error, valid_bytes, error_is_tail: false };
            }
            continue;
        }
        let line_error = |message: String| StoreError::CorruptLog { line: line_no, message };
        if buf.last() != Some(&b'\n') {
            error = Some(line_error("line is not terminated".into()));
            continue;
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            valid_bytes += read as u64;
            continue;
        }
        let record: LogRecord = match serde_json::from_slice(&buf) {
            Ok(r) => r,
            Err(e) => {
                error = Some(line_error(e.to_string()));
                continue;
            }
        };
        let count = seen.entry(record.session_id.clone()).or_insert(0);
        *count += 1;
        match snapshots.get(&record.session_id) {
            Some(snap) if *count < snap.events_applied => {}
            Some(snap) if *count == snap.events_applied => {
                sessions.insert(
                    record.session_id.clone(),
                    TrackedSession { state: snap.state.clone(), events: snap.events_applied },
                );
            }
            _ => {
                if let Err(message) = apply_record(&mut sessions, &record) {
                    *count -= 1;
                    error = Some(line_error(message));
                    continue;
                }
            }
        }
        valid_bytes += read as u64;
    }
    Replay { sessions, error_is_tail: error.is_some(), error, valid_bytes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    /// Write a snapshot each time a session's event count crosses a multiple of this; 0 disables.
    pub snapshot_every: u64,
    /// Truncate an unreadable final line (a write torn by a crash) instead of failing.
    pub repair_torn_tail: bool,
    /// fsync the log after every append.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { snapshot_every: DEFAULT_SNAPSHOT_EVERY, repair_torn_tail: false, sync: true }
    }
}

#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    log: Mutex<File>,
    options: StoreOptions,
}

fn read_snapshots(dir: &Path) -> Result<BTreeMap<String, Snapshot>, StoreError> {
    let mut snapshots = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let snap: Snapshot = serde_json::from_str(&text)
            .map_err(|e| StoreError::CorruptSnapshot { path: path.clone(), message: e.to_string() })?;
        snapshots.insert(snap.session_id.clone(), snap);
    }
    Ok(snapshots)
}

fn snapshot_file_name(session_id: &str) -> String {
    // Session ids come from clients; hash them into safe file names.
    format!("{}.json", hex::encode(&Sha256::digest(session_id.as_bytes())[..16]))
}

impl FileStore {
    /// Opens (creating if needed) the store in `dir` and replays its log.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<(FileStore, Sessions), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
        fs::create_dir_all(dir.join(BLOB_DIR))?;
        let log_path = dir.join(LOG_FILE);
        let snapshots = read_snapshots(&dir.join(SNAPSHOT_DIR))?;

        let mut outcome = match File::open(&log_path) {
            Ok(f) => replay_with(f, &snapshots),
            Err(e) if e.kind() == io::ErrorKind::NotFound => replay_prefix(io::empty()),
            Err(e) => return Err(e.into()),
        };
        let stale = snapshots
            .values()
            .any(|s| outcome.sessions.get(&s.session_id).is_none_or(|t| t.events < s.events_applied));
        if stale {
            tracing::warn!("snapshots are ahead of the event log, replaying from scratch");
            outcome = match File::open(&log_path) {
                Ok(f) => replay_prefix(f),
                Err(_) => replay_prefix(io::empty()),
            };
        }
        if let Some(error) = outcome.error {
            if !(options.repair_torn_tail && outcome.error_is_tail) {
                return Err(error);
            }
            tracing::warn!(%error, kept_bytes = outcome.valid_bytes, "truncating torn log tail");
            OpenOptions::new().write(true).open(&log_path)?.set_len(outcome.valid_bytes)?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok((FileStore { dir, log: Mutex::new(log), options }, outcome.sessions))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    /// Appends `new_events`, which `session` already includes, and snapshots
    /// the session when its event count crosses a snapshot boundary.
    pub fn record(&self, session: &TrackedSession, new_events: &[SessionEvent]) -> Result<(), StoreError> {
        if new_events.is_empty() {
            return Ok(());
        }
        let id = &session.state.session_id;
        let mut buf = String::new();
        for event in new_events {
            buf.push_str(&encode_record(id, event));
        }
        {
            let mut log = self.log.lock();
            log.write_all(buf.as_bytes())?;
            log.flush()?;
            if self.options.sync {
                log.sync_data()?;
            }
        }
        let every = self.options.snapshot_every;
        let before = session.events.saturating_sub(new_events.len() as u64);
        if every > 0 && session.events / every > before / every {
            self.write_snapshot(session)?;
        }
        Ok(())
    }

    pub fn write_snapshot(&self, session: &TrackedSession) -> Result<(), StoreError> {
        let snap = Snapshot {
            session_id: session.state.session_id.clone(),
            events_applied: session.events,
            state: session.state.clone(),
        };
        let path = self.dir.join(SNAPSHOT_DIR).join(snapshot_file_name(&snap.session_id));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(&snap)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Stores `bytes` under their SHA-256 and returns the hex key.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let key = hex::encode(Sha256::digest(bytes));
        let path = self.dir.join(BLOB_DIR).join(&key);
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(key)
    }

    pub fn get_blob(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            return Err(StoreError::InvalidBlobKey(key.to_string()));
        }
        match fs::read(self.dir.join(BLOB_DIR).join(key)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::BlobNotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }
}

/// Replays the log in `dir` twice, with and without snapshots, and returns
/// the common hash. Differing results are reported as a corrupt snapshot.
pub fn verify_dir(dir: impl AsRef<Path>) -> Result<(Sessions, String), StoreError> {
    let dir = dir.as_ref();
    let log_path = dir.join(LOG_FILE);
    let plain = match File::open(&log_path) {
        Ok(f) => replay(f)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Sessions::new(),
        Err(e) => return Err(e.into()),
    };
    let hash = sessions_hash(&plain);
    let snap_dir = dir.join(SNAPSHOT_DIR);
    if snap_dir.is_dir() {
        for snap in read_snapshots(&snap_dir)?.into_values() {
            let mut partial = Sessions::new();
            let mut count = 0u64;
            for line in BufReader::new(File::open(&log_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: LogRecord = serde_json::from_str(&line)?;
                if record.session_id != snap.session_id {
                    continue;
                }
                apply_record(&mut partial, &record).map_err(|message| StoreError::CorruptLog { line: 0, message })?;
                count += 1;
                if count == snap.events_applied {
                    break;
                }
            }
            let matches = partial.get(&snap.session_id).is_some_and(|t| t.events == snap.events_applied && t.state == snap.state);
            if !matches {
                return Err(StoreError::CorruptSnapshot {
                    path: snap_dir.join(snapshot_file_name(&snap.session_id)),
                    message: format!("disagrees with the first {} logged events", snap.events_applied),
                });
            }
        }
    }
    Ok((plain, hash))
}

/// One finalized session in the dataset export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub session_id: String,
    pub image_ref: String,
    pub mode: String,
    pub merged_caption: String,
    pub unit_count: usize,
    pub total_time_s: f64,
    pub merged_tree: SemanticUnitTree,
}

impl ExportRecord {
    /// `None` for sessions that are not finalized.
    pub fn from_state(state: &SessionState) -> Result<Option<ExportRecord>, StoreError> {
        if !state.is_finalized() {
            return Ok(None);
        }
        Ok(Some(ExportRecord {
            session_id: state.session_id.clone(),
            image_ref: state.image_ref.clone(),
            mode: state.mode.label().to_string(),
            merged_caption: state.merged_caption.clone().unwrap_or_default(),
            unit_count: state.merged_tree.unit_count(),
            total_time_s: total_time(state)?,
            merged_tree: state.merged_tree.clone(),
        }))
    }
}

/// Export records for finalized sessions, sorted by session id, optionally
/// restricted to one mode label.
pub fn export_records<'a>(
    states: impl IntoIterator<Item = &'a SessionState>,
    mode: Option<&str>,
) -> Result<Vec<ExportRecord>, StoreError> {
    let mut records = Vec::new();
    for state in states {
        if mode.is_some_and(|m| m != state.mode.label()) {
            continue;
        }
        if let Some(record) = ExportRecord::from_state(state)? {
            records.push(record);
        }
    }
    records.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(records)
}

/// Writes one JSON object per line, LF-terminated. Returns the record count.
pub fn write_export_jsonl(records: &[ExportRecord], out: &mut impl Write) -> Result<usize, StoreError> {
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(records.len())
}

/// Metrics for a finalized session. `quality` is J when a reference is known;
/// E follows from it.
pub fn metrics_row(state: &SessionState, quality: Option<f64>) -> Result<MetricsRow, StoreError> {
    let report = intrinsic_report(state)?;
    let e = quality.and_then(|j| efficiency(j, report.total_time_s).ok());
    Ok(MetricsRow {
        session_id: state.session_id.clone(),
        mode: state.mode.label().to_string(),
        unit_count: report.unit_count,
        total_time_s: report.total_time_s,
        speed_units_per_s: report.speed,
        duplication_pct: report.duplication_pct,
        j: quality,
        e,
    })
}

pub fn write_metrics_csv(rows: &[MetricsRow], out: impl Write) -> Result<(), StoreError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record(["session_id", "mode", "unit_count", "total_time_s", "speed_units_per_s", "duplication_pct", "J", "E"])?;
    }
    writer.flush()?;
    Ok(())
}
