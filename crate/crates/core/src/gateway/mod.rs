//! Language-model and speech-to-text gateway.
//!
//! Every model call goes through [`Gateway::call`], which renders the
//! prompt, consults the idempotency cache, enforces the concurrency cap,
//! retries transient failures and appends an audit record.

mod audit;
mod grammar;
mod http;
mod mock;
mod speech;
mod template;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use audit::{AuditLog, AuditRecord};
pub use grammar::{extract_json, tokenize_sentences};
pub use http::{HttpChatBackend, LLM_ENDPOINT_ENV, LLM_KEY_ENV, LLM_MODEL_ENV};
pub use mock::{mock_denoise, mock_merge_parallel, mock_merge_sequential, mock_questions, MockBackend};
pub use speech::{AudioFormat, HttpSpeech, MockSpeech, SpeechBackend, MOCK_TRANSCRIPT_HEADER, STT_ENDPOINT_ENV, STT_KEY_ENV, STT_MODEL_ENV};
pub use template::{PromptTemplate, RenderedPrompt, TemplateId};

use crate::retry::RetryPolicy;
use crate::semantic::{units_from_json, SemanticUnit};

/// Questions per caption.
pub const QUESTION_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid gateway input: {0}")]
    InvalidInput(String),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    ProviderTimeout { attempts: u32, message: String },
    #[error("provider rejected the request: {0}")]
    Provider(String),
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("unsupported audio format {0:?}")]
    UnsupportedFormat(String),
}

/// Failure reported by a model or speech backend.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { temperature: 0.0, max_output_tokens: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub template_id: TemplateId,
    pub inputs: Vec<String>,
    pub params: ModelParams,
    /// Parse error of a previous reply, appended when asking for a repaired answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_note: Option<String>,
}

impl GatewayRequest {
    pub fn new(template_id: TemplateId, inputs: Vec<String>) -> Self {
        GatewayRequest { template_id, inputs, params: ModelParams::default(), repair_note: None }
    }

    /// SHA-256 over the canonical JSON form of the request and template version.
    pub fn idempotency_key(&self) -> String {
        let version = PromptTemplate::get(self.template_id).version;
        let body = serde_json::to_vec(&(version, self)).expect("request serialization is infallible");
        hex::encode(Sha256::digest(body))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayResponse {
    pub text: String,
    pub input_token_count: u64,
    pub output_token_count: u64,
    pub latency_ms: u64,
}

/// Raw model output before caching and auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// A chat model behind the gateway.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &GatewayRequest, prompt: &RenderedPrompt) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Sequential,
    Parallel,
}

/// Counting semaphore guarding in-flight backend calls.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(cap: usize) -> Self {
        Limiter { available: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock();
        while *available == 0 {
            self.freed.wait(&mut available);
        }
        *available -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub const DEFAULT_CONCURRENCY: usize = 8;

pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    speech: Arc<dyn SpeechBackend>,
    retry: RetryPolicy,
    cache: Mutex<HashMap<String, GatewayResponse>>,
    limiter: Limiter,
    audit: Option<AuditLog>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.retry)
            .field("cached", &self.cache.lock().len())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>, speech: Arc<dyn SpeechBackend>) -> Self {
        Gateway {
            backend,
            speech,
            retry: RetryPolicy::default(),
            cache: Mutex::new(HashMap::new()),
            limiter: Limiter::new(DEFAULT_CONCURRENCY),
            audit: None,
        }
    }

    /// Deterministic offline gateway.
    pub fn mock() -> Self {
        Gateway::new(Arc::new(MockBackend), Arc::new(MockSpeech)).with_retry(RetryPolicy::immediate(3))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.limiter = Limiter::new(cap);
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    /// One model call, served from the cache when the same request was seen before.
    pub fn call(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let key = request.idempotency_key();
        if let Some(hit) = self.cache.lock().get(&key).cloned() {
            self.record(&key, request, Some(&hit), true, None);
            return Ok(hit);
        }

        let template = PromptTemplate::get(request.template_id);
        let mut prompt = template.render(&request.inputs)?;
        if let Some(note) = &request.repair_note {
            prompt.user.push_str("\n\nYour previous reply could not be parsed as JSON (");
            prompt.user.push_str(note);
            prompt.user.push_str("). Reply with the JSON array only.");
        }

        let started = Instant::now();
        let outcome = {
            let _permit = self.limiter.acquire();
            self.retry.run(BackendError::is_transient, |_| self.backend.complete(request, &prompt))
        };
        let reply = match outcome {
            Ok(reply) => reply,
            Err(exhausted) => {
                let error = match exhausted.error {
                    BackendError::Transient(message) => {
                        GatewayError::ProviderTimeout { attempts: exhausted.attempts, message }
                    }
                    BackendError::Fatal(message) => GatewayError::Provider(message),
                };
                self.record(&key, request, None, false, Some(error.to_string()));
                return Err(error);
            }
        };
        let response = GatewayResponse {
            text: strip_prefix(&reply.text, prompt.assistant_prefix.as_deref()),
            input_token_count: reply.input_tokens,
            output_token_count: reply.output_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
        };
        // A concurrent identical call may have landed first; keep whichever is cached.
        let response = self.cache.lock().entry(key.clone()).or_insert(response).clone();
        self.record(&key, request, Some(&response), false, None);
        Ok(response)
    }

    fn record(
        &self,
        key: &str,
        request: &GatewayRequest,
        response: Option<&GatewayResponse>,
        cached: bool,
        error: Option<String>,
    ) {
        if let Some(audit) = &self.audit {
            audit.append(&AuditRecord::new(key, request, response, cached, error));
        }
    }

    /// Merges captions. A sequential merge with a blank newcomer returns the
    /// accumulated caption without a model call.
    pub fn merge_captions(&self, kind: MergeKind, captions: &[String]) -> Result<String, GatewayError> {
        match kind {
            MergeKind::Sequential => {
                if captions.len() != 2 {
                    return Err(GatewayError::InvalidInput(format!(
                        "sequential merge takes 2 captions, got {}",
                        captions.len()
                    )));
                }
                if captions[1].trim().is_empty() {
                    return Ok(captions[0].clone());
                }
                if captions[0].trim().is_empty() {
                    return Ok(captions[1].clone());
                }
            }
            MergeKind::Parallel => {
                if captions.len() < 2 {
                    return Err(GatewayError::InvalidInput(format!(
                        "parallel merge takes at least 2 captions, got {}",
                        captions.len()
                    )));
                }
            }
        }
        let template = match kind {
            MergeKind::Sequential => TemplateId::MergeSequential,
            MergeKind::Parallel => TemplateId::MergeParallel,
        };
        Ok(self.call(&GatewayRequest::new(template, captions.to_vec()))?.text)
    }

    pub fn denoise(&self, caption: &str) -> Result<String, GatewayError> {
        if caption.trim().is_empty() {
            return Ok(String::new());
        }
        Ok(self.call(&GatewayRequest::new(TemplateId::Denoise, vec![caption.to_string()]))?.text)
    }

    /// Units of a caption. A reply that is not the expected JSON gets one
    /// repair request before the error surfaces.
    pub fn extract_units(&self, caption: &str, source_round: u32) -> Result<Vec<SemanticUnit>, GatewayError> {
        if caption.trim().is_empty() {
            return Err(GatewayError::EmptyCaption);
        }
        let mut request = GatewayRequest::new(TemplateId::ExtractUnits, vec![caption.to_string()]);
        let first = self.call(&request)?;
        match parse_units(&first.text, source_round) {
            Ok(units) => Ok(units),
            Err(note) => {
                tracing::warn!(%note, "unit extraction reply malformed, asking for a repair");
                request.repair_note = Some(note);
                let second = self.call(&request)?;
                parse_units(&second.text, source_round).map_err(GatewayError::MalformedResponse)
            }
        }
    }

    /// Exactly five questions, general to detailed. Short replies are
    /// padded with broad questions in front.
    pub fn generate_questions(&self, caption: &str) -> Result<Vec<String>, GatewayError> {
        if caption.trim().is_empty() {
            return Err(GatewayError::EmptyCaption);
        }
        let reply = self.call(&GatewayRequest::new(TemplateId::GenerateQuestions, vec![caption.to_string()]))?;
        let parsed = parse_questions(&reply.text);
        if parsed.is_empty() {
            return Err(GatewayError::MalformedResponse("no questions found in reply".into()));
        }
        Ok(pad_questions(parsed))
    }

    pub fn transcribe(&self, audio: &[u8], format: &str) -> Result<String, GatewayError> {
        let format: AudioFormat = format.parse()?;
        let _permit = self.limiter.acquire();
        self.retry
            .run(BackendError::is_transient, |_| self.speech.transcribe(audio, format))
            .map_err(|e| match e.error {
                BackendError::Transient(message) => GatewayError::ProviderTimeout { attempts: e.attempts, message },
                BackendError::Fatal(message) => GatewayError::Provider(message),
            })
    }

    pub fn cached_responses(&self) -> usize {
        self.cache.lock().len()
    }
}

fn strip_prefix(text: &str, prefix: Option<&str>) -> String {
    let trimmed = text.trim();
    match prefix {
        Some(p) => trimmed.strip_prefix(p).map(str::trim).unwrap_or(trimmed).to_string(),
        None => trimmed.to_string(),
    }
}

/// Parses an extraction reply, tolerating code fences and text around the array.
fn parse_units(text: &str, source_round: u32) -> Result<Vec<SemanticUnit>, String> {
    let start = text.find('[').ok_or("no JSON array in reply")?;
    let end = text.rfind(']').ok_or("unterminated JSON array")?;
    if end < start {
        return Err("unterminated JSON array".into());
    }
    let value: serde_json::Value = serde_json::from_str(&text[start..=end]).map_err(|e| e.to_string())?;
    units_from_json(&value, source_round).map_err(|e| e.to_string())
}

fn parse_questions(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
            // Drop "Q1:", "Question 1:", "1." style labels.
            let lowered = line.to_lowercase();
            let label_end = if lowered.starts_with('q') || lowered.starts_with("question") {
                line.find([':', '.', ')']).filter(|&i| i <= 12)
            } else if line.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                line.find(['.', ')', ':']).filter(|&i| i <= 3)
            } else {
                None
            };
            match label_end {
                Some(i) => line[i + 1..].trim().to_string(),
                None => line.to_string(),
            }
        })
        .filter(|q| q.ends_with('?'))
        .collect()
}

const PADDING_QUESTIONS: [&str; QUESTION_COUNT] = [
    "What kind of image is this describing?",
    "What is the main object in the image?",
    "What objects appear in the image?",
    "Where are the objects located in the image?",
    "What colors appear in the image?",
];

fn pad_questions(mut questions: Vec<String>) -> Vec<String> {
    questions.truncate(QUESTION_COUNT);
    let missing = QUESTION_COUNT - questions.len();
    let mut out: Vec<String> = PADDING_QUESTIONS
        .iter()
        .filter(|p| !questions.iter().any(|q| q == *p))
        .take(missing)
        .map(|p| p.to_string())
        .collect();
    out.extend(questions);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted {
        replies: Vec<Result<&'static str, BackendError>>,
        calls: AtomicU32,
    }

    impl ModelBackend for Scripted {
        fn complete(&self, _: &GatewayRequest, _: &RenderedPrompt) -> Result<BackendReply, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            let reply = self.replies[i.min(self.replies.len() - 1)].clone()?;
            Ok(BackendReply { text: reply.to_string(), input_tokens: 1, output_tokens: 1 })
        }
    }

    fn scripted(replies: Vec<Result<&'static str, BackendError>>) -> (Arc<Scripted>, Gateway) {
        let backend = Arc::new(Scripted { replies, calls: AtomicU32::new(0) });
        let gw = Gateway::new(backend.clone(), Arc::new(MockSpeech)).with_retry(RetryPolicy::immediate(3));
        (backend, gw)
    }

    #[test]
    fn identical_requests_hit_the_cache() {
        let (backend, gw) = scripted(vec![Ok("merged")]);
        let req = GatewayRequest::new(TemplateId::Denoise, vec!["x".into()]);
        let a = gw.call(&req).unwrap();
        let b = gw.call(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_failures_are_retried_then_surface() {
        let (backend, gw) = scripted(vec![Err(BackendError::Transient("503".into()))]);
        let err = gw.denoise("a car").unwrap_err();
        assert_eq!(err, GatewayError::ProviderTimeout { attempts: 4, message: "503".into() });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn extraction_gets_one_repair_attempt() {
        let (backend, gw) = scripted(vec![Ok("sure! here you go"), Ok(r#"[{"name":"car","attributes":{"colour":"red"}}]"#)]);
        let units = gw.extract_units("a red car", 1).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);

        let (_, gw) = scripted(vec![Ok("nope")]);
        assert!(matches!(gw.extract_units("a red car", 1), Err(GatewayError::MalformedResponse(_))));
    }

    #[test]
    fn prefixes_and_fences_are_tolerated() {
        assert_eq!(strip_prefix(" Here's the merged sequential caption: a car.", Some("Here's the merged sequential caption:")), "a car.");
        let units = parse_units("```json\n[{\"name\":\"car\",\"attributes\":{}}]\n```", 2).unwrap();
        assert_eq!(units[0].source_round, 2);
    }

    #[test]
    fn questions_are_padded_to_five() {
        let parsed = parse_questions("Q1: What color is the car?\nQuestion 2: Where is the road?\nnot a question");
        assert_eq!(parsed, vec!["What color is the car?", "Where is the road?"]);
        let padded = pad_questions(parsed);
        assert_eq!(padded.len(), 5);
        assert_eq!(padded[3], "What color is the car?");
    }

    #[test]
    fn merge_input_shapes_are_checked() {
        let gw = Gateway::mock();
        assert!(gw.merge_captions(MergeKind::Sequential, &["a".into()]).is_err());
        assert!(gw.merge_captions(MergeKind::Parallel, &["a".into()]).is_err());
        assert_eq!(gw.merge_captions(MergeKind::Sequential, &["a black car.".into(), " ".into()]).unwrap(), "a black car.");
    }
}
