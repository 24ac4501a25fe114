//! Backends speaking the common chat-completions / embeddings JSON shape.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{BackendFailure, BackendProfile, ChatBackend, ChatRequest, Completion, EmbedBackend, GatewayError};

pub struct HttpBackend {
    client: Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
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
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl HttpBackend {
    pub fn new(profile: &BackendProfile) -> Result<Self, GatewayError> {
        let endpoint = profile
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::InvalidProfile(format!("{}: missing endpoint", profile.role)))?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(profile.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| GatewayError::InvalidProfile(e.to_string()))?;
        let api_key = profile.api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
        Ok(Self { client, endpoint, model: profile.model_name.clone(), api_key })
    }

    fn post(&self, body: serde_json::Value) -> Result<String, BackendFailure> {
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendFailure::transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendFailure::transient(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Err(BackendFailure::transient(format!("HTTP {status}")))
        } else {
            Err(BackendFailure::fatal(format!("HTTP {status}: {}", crate::text::truncate_bytes(&text, 200))))
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let raw = self.post(body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&raw).map_err(|e| BackendFailure::fatal(format!("bad chat response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendFailure::fatal("chat response without content"))?;
        Ok(Completion { text, usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)) })
    }
}

impl EmbedBackend for HttpBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendFailure> {
        let raw = self.post(json!({ "model": self.model, "input": texts }))?;
        let parsed: EmbedResponse =
            serde_json::from_str(&raw).map_err(|e| BackendFailure::fatal(format!("bad embedding response: {e}")))?;
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
