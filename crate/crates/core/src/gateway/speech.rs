use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, GatewayError};

pub const STT_ENDPOINT_ENV: &str = "COTALK_STT_ENDPOINT";
pub const STT_MODEL_ENV: &str = "COTALK_STT_MODEL";
pub const STT_KEY_ENV: &str = "COTALK_STT_API_KEY";

/// Header carried by fixture blobs for [`MockSpeech`].
pub const MOCK_TRANSCRIPT_HEADER: &str = "COTALK-TRANSCRIPT:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Wav,
    Mp3,
    Ogg,
    Webm,
    Flac,
    M4a,
}

impl AudioFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            AudioFormat::Wav => "wav",
            AudioFormat::Mp3 => "mp3",
            AudioFormat::Ogg => "ogg",
            AudioFormat::Webm => "webm",
            AudioFormat::Flac => "flac",
            AudioFormat::M4a => "m4a",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            AudioFormat::Wav => "audio/wav",
            AudioFormat::Mp3 => "audio/mpeg",
            AudioFormat::Ogg => "audio/ogg",
            AudioFormat::Webm => "audio/webm",
            AudioFormat::Flac => "audio/flac",
            AudioFormat::M4a => "audio/mp4",
        }
    }
}

impl fmt::Display for AudioFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AudioFormat {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wav" | "wave" => Ok(AudioFormat::Wav),
            "mp3" | "mpeg" => Ok(AudioFormat::Mp3),
            "ogg" => Ok(AudioFormat::Ogg),
            "webm" => Ok(AudioFormat::Webm),
            "flac" => Ok(AudioFormat::Flac),
            "m4a" | "mp4" => Ok(AudioFormat::M4a),
            _ => Err(GatewayError::UnsupportedFormat(s.to_string())),
        }
    }
}

pub trait SpeechBackend: Send + Sync {
    fn transcribe(&self, audio: &[u8], format: AudioFormat) -> Result<String, BackendError>;
}

/// Reads the transcript from a `COTALK-TRANSCRIPT:<text>\n` header.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSpeech;

impl MockSpeech {
    /// Builds a fixture blob carrying `transcript`.
    pub fn fixture(transcript: &str, payload: &[u8]) -> Vec<u8> {
        let mut blob = format!("{MOCK_TRANSCRIPT_HEADER}{transcript}\n").into_bytes();
        blob.extend_from_slice(payload);
        blob
    }
}

impl SpeechBackend for MockSpeech {
    fn transcribe(&self, audio: &[u8], _format: AudioFormat) -> Result<String, BackendError> {
        let rest = audio
            .strip_prefix(MOCK_TRANSCRIPT_HEADER.as_bytes())
            .ok_or_else(|| BackendError::Fatal("mock audio has no transcript header".into()))?;
        let line = rest.split(|&b| b == b'\n').next().unwrap_or_default();
        String::from_utf8(line.to_vec())
            .map(|s| s.trim().to_string())
            .map_err(|_| BackendError::Fatal("transcript header is not UTF-8".into()))
    }
}

/// Client for an OpenAI-compatible `POST {endpoint}/audio/transcriptions`.
pub struct HttpSpeech {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpSpeech {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        HttpSpeech {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(STT_ENDPOINT_ENV).ok()?;
        let model = std::env::var(STT_MODEL_ENV).unwrap_or_else(|_| "whisper-1".to_string());
        Some(HttpSpeech::new(endpoint, model, std::env::var(STT_KEY_ENV).ok()))
    }
}

#[derive(Deserialize)]
struct TranscriptionReply {
    text: String,
}

impl SpeechBackend for HttpSpeech {
    fn transcribe(&self, audio: &[u8], format: AudioFormat) -> Result<String, BackendError> {
        let part = reqwest::blocking::multipart::Part::bytes(audio.to_vec())
            .file_name(format!("audio.{format}"))
            .mime_str(format.mime())
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        let form = reqwest::blocking::multipart::Form::new()
            .text("model", self.model.clone())
            .part("file", part);
        let mut request = self
            .client
            .post(format!("{}/audio/transcriptions", self.endpoint))
            .multipart(form);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("status {status}")));
        }
        let reply: TranscriptionReply = response.json().map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(reply.text.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_reads_the_fixture_header() {
        let blob = MockSpeech::fixture("a black car", b"\x00\x01RIFF");
        assert_eq!(MockSpeech.transcribe(&blob, AudioFormat::Wav).unwrap(), "a black car");
        assert!(MockSpeech.transcribe(b"RIFF", AudioFormat::Wav).is_err());
    }

    #[test]
    fn unknown_formats_are_rejected() {
        assert_eq!("WAV".parse::<AudioFormat>().unwrap(), AudioFormat::Wav);
        assert!(matches!("midi".parse::<AudioFormat>(), Err(GatewayError::UnsupportedFormat(_))));
    }
}
