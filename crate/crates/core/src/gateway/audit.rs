use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{GatewayRequest, GatewayResponse, PromptTemplate, TemplateId};

/// One line of the request/response audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub idempotency_key: String,
    pub template_id: TemplateId,
    pub template_version: u32,
    pub input_token_count: Option<u64>,
    pub output_token_count: Option<u64>,
    pub latency_ms: Option<u64>,
    pub cached: bool,
    pub error: Option<String>,
}

impl AuditRecord {
    pub fn new(
        key: &str,
        request: &GatewayRequest,
        response: Option<&GatewayResponse>,
        cached: bool,
        error: Option<String>,
    ) -> Self {
        AuditRecord {
            idempotency_key: key.to_string(),
            template_id: request.template_id,
            template_version: PromptTemplate::get(request.template_id).version,
            input_token_count: response.map(|r| r.input_token_count),
            output_token_count: response.map(|r| r.output_token_count),
            latency_ms: response.map(|r| r.latency_ms),
            cached,
            error,
        }
    }
}

/// Append-only JSON-lines sink shared by concurrent calls.
pub struct AuditLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog::from_writer(BufWriter::new(file)))
    }

    pub fn from_writer(writer: impl Write + Send + 'static) -> Self {
        AuditLog { sink: Mutex::new(Box::new(writer)) }
    }

    pub fn append(&self, record: &AuditRecord) {
        let line = serde_json::to_string(record).expect("audit record serialization is infallible");
        let mut sink = self.sink.lock();
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            tracing::error!(error = %e, "audit log write failed");
        }
    }
}
