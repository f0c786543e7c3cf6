use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, BackendReply, GatewayRequest, ModelBackend, RenderedPrompt};

pub const LLM_ENDPOINT_ENV: &str = "COTALK_LLM_ENDPOINT";
pub const LLM_MODEL_ENV: &str = "COTALK_LLM_MODEL";
pub const LLM_KEY_ENV: &str = "COTALK_LLM_API_KEY";

/// Chat-completion client for an OpenAI-compatible `POST {endpoint}/chat/completions`.
///
/// The assistant prefix is not sent; the gateway strips it if the model echoes it.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        HttpChatBackend {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(LLM_ENDPOINT_ENV).ok()?;
        let model = std::env::var(LLM_MODEL_ENV).unwrap_or_else(|_| "gpt-4o".to_string());
        Some(HttpChatBackend::new(endpoint, model, std::env::var(LLM_KEY_ENV).ok()))
    }
}

impl ModelBackend for HttpChatBackend {
    fn complete(&self, request: &GatewayRequest, prompt: &RenderedPrompt) -> Result<BackendReply, BackendError> {
        let body = json!({
            "model": self.model,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        let mut http = self.client.post(format!("{}/chat/completions", self.endpoint)).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(BackendError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("status {status}")));
        }
        let reply: ChatReply = response.json().map_err(|e| BackendError::Fatal(e.to_string()))?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal("reply has no message content".into()))?;
        let (input_tokens, output_tokens) = match reply.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                (prompt.system.split_whitespace().count() + prompt.user.split_whitespace().count()) as u64,
                text.split_whitespace().count() as u64,
            ),
        };
        Ok(BackendReply { text, input_tokens, output_tokens })
    }
}
