//! Uniform access to chat-completion and embedding backends.
//!
//! A [`Gateway`] binds one [`BackendProfile`] to each [`Role`], caps the number
//! of in-flight requests, retries transient failures with exponential backoff,
//! normalizes embeddings to unit length and logs a [`CallRecord`] per call.
//! Optionally a fixture layer records or replays responses so that runs
//! against remote backends can be reproduced byte for byte.

mod fixtures;
mod http;
mod limiter;
pub mod mock;
pub mod prompts;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EmbeddingVector;

pub use fixtures::{FixtureMode, FixtureStore};
pub use http::HttpBackend;
pub use limiter::InflightLimiter;
pub use mock::MockBackend;
pub use prompts::{vars, PromptTemplate, Vars};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("template variable {0:?} is not bound")]
    TemplateVarMissing(String),
    #[error("embedding request with no input texts")]
    EmptyInput,
    #[error("no backend bound to role {0}")]
    UnboundRole(Role),
    #[error("backend for role {role} has kind {kind:?}, which cannot serve this call")]
    WrongKind { role: Role, kind: BackendKind },
    #[error("invalid backend profile: {0}")]
    InvalidProfile(String),
    #[error("no recorded fixture for {0}")]
    FixtureMiss(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
    #[error("embedding backend returned inconsistent vectors: {0}")]
    BadEmbedding(String),
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone)]
pub struct BackendFailure {
    pub transient: bool,
    pub message: String,
}

impl BackendFailure {
    pub fn transient(message: impl Into<String>) -> Self {
        Self { transient: true, message: message.into() }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { transient: false, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Dataset generation model.
    #[serde(rename = "generator", alias = "generator_M1")]
    Generator,
    /// Framework model: extraction, summarization, relevance judging, answering.
    #[serde(rename = "framework", alias = "framework_M2")]
    Framework,
    #[serde(rename = "embedder", alias = "embedder_E")]
    Embedder,
    /// Answer-correctness judge.
    #[serde(rename = "judge")]
    Judge,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Generator, Role::Framework, Role::Embedder, Role::Judge];

    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Generator => 0.8,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Generator => "generator",
            Role::Framework => "framework",
            Role::Embedder => "embedder",
            Role::Judge => "judge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    HttpEmbed,
    Mock,
}

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    60.0
}
fn default_backoff() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub role: Role,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl BackendProfile {
    pub fn mock(role: Role) -> Self {
        Self {
            role,
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            api_key_env: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            backoff_base_ms: default_backoff(),
            temperature: None,
        }
    }

    pub fn http(role: Role, endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        let kind = if role == Role::Embedder { BackendKind::HttpEmbed } else { BackendKind::HttpChat };
        Self { kind, endpoint: Some(endpoint.into()), model_name: model_name.into(), ..Self::mock(role) }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::HttpChat | BackendKind::HttpEmbed => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::InvalidProfile(format!("{}: http backend needs an endpoint", self.role)));
                }
                if self.model_name.is_empty() {
                    return Err(GatewayError::InvalidProfile(format!("{}: http backend needs a model name", self.role)));
                }
            }
            BackendKind::Mock => {}
        }
        let embed_role = self.role == Role::Embedder;
        let ok = match self.kind {
            BackendKind::HttpChat => !embed_role,
            BackendKind::HttpEmbed => embed_role,
            BackendKind::Mock => true,
        };
        if !ok {
            return Err(GatewayError::WrongKind { role: self.role, kind: self.kind });
        }
        Ok(())
    }

    pub fn temperature(&self) -> f64 {
        self.temperature.unwrap_or_else(|| self.role.default_temperature())
    }

    fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << retry.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub template_id: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub latency_ms: u64,
    pub retry_count: u32,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    pub record: CallRecord,
}

/// A chat request as seen by a backend.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub template_id: &'a str,
    pub vars: &'a Vars,
    pub prompt: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    /// Usage reported by the backend, if any.
    pub usage: Option<(usize, usize)>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendFailure>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendFailure>;
}

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
    fn name(&self) -> &str;
}

/// Approximate tokenizer: `ceil(bytes / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteQuarterTokenizer;

impl Tokenizer for ByteQuarterTokenizer {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
    fn name(&self) -> &str {
        "bytes/4"
    }
}

/// Counts whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
    fn name(&self) -> &str {
        "whitespace"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Bytes4,
    Whitespace,
}

impl TokenizerKind {
    pub fn build(self) -> Arc<dyn Tokenizer> {
        match self {
            TokenizerKind::Bytes4 => Arc::new(ByteQuarterTokenizer),
            TokenizerKind::Whitespace => Arc::new(WhitespaceTokenizer),
        }
    }
}

/// Count tokens with the default approximate tokenizer.
pub fn count_tokens(text: &str) -> usize {
    ByteQuarterTokenizer.count(text)
}

struct ChatBinding {
    profile: BackendProfile,
    backend: Arc<dyn ChatBackend>,
}

struct EmbedBinding {
    profile: BackendProfile,
    backend: Arc<dyn EmbedBackend>,
}

struct FixtureLayer {
    mode: FixtureMode,
    path: PathBuf,
    store: Mutex<FixtureStore>,
}

pub struct Gateway {
    chat: BTreeMap<Role, ChatBinding>,
    embedder: Option<EmbedBinding>,
    limiter: InflightLimiter,
    tokenizer: Arc<dyn Tokenizer>,
    log: Mutex<Vec<CallRecord>>,
    fixtures: Option<FixtureLayer>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("roles", &self.chat.keys().collect::<Vec<_>>())
            .field("max_inflight", &self.limiter.capacity())
            .field("tokenizer", &self.tokenizer.name())
            .finish()
    }
}

impl Gateway {
    /// Every role served by the deterministic mock backend.
    pub fn mock(max_inflight: usize) -> Self {
        let profiles = Role::ALL.iter().map(|r| BackendProfile::mock(*r)).collect::<Vec<_>>();
        Self::from_profiles(&profiles, max_inflight).expect("mock profiles are valid")
    }

    /// Builds a gateway with exactly one profile per role.
    pub fn from_profiles(profiles: &[BackendProfile], max_inflight: usize) -> Result<Self, GatewayError> {
        let mut gateway = Self {
            chat: BTreeMap::new(),
            embedder: None,
            limiter: InflightLimiter::new(max_inflight),
            tokenizer: Arc::new(ByteQuarterTokenizer),
            log: Mutex::new(Vec::new()),
            fixtures: None,
        };
        let mut seen = Vec::new();
        for p in profiles {
            p.validate()?;
            if seen.contains(&p.role) {
                return Err(GatewayError::InvalidProfile(format!("role {} bound twice", p.role)));
            }
            seen.push(p.role);
            match (p.role, p.kind) {
                (Role::Embedder, BackendKind::Mock) => gateway.embedder = Some(EmbedBinding {
                    profile: p.clone(),
                    backend: Arc::new(MockBackend),
                }),
                (Role::Embedder, _) => gateway.embedder = Some(EmbedBinding {
                    profile: p.clone(),
                    backend: Arc::new(HttpBackend::new(p)?),
                }),
                (role, BackendKind::Mock) => {
                    gateway.chat.insert(role, ChatBinding { profile: p.clone(), backend: Arc::new(MockBackend) });
                }
                (role, _) => {
                    gateway.chat.insert(role, ChatBinding { profile: p.clone(), backend: Arc::new(HttpBackend::new(p)?) });
                }
            }
        }
        for role in Role::ALL {
            if !seen.contains(&role) {
                return Err(GatewayError::UnboundRole(role));
            }
        }
        Ok(gateway)
    }

    /// Replaces the backend behind a chat role, keeping its profile settings.
    pub fn with_chat_backend(mut self, role: Role, backend: Arc<dyn ChatBackend>) -> Self {
        let profile = self.chat.get(&role).map(|b| b.profile.clone()).unwrap_or_else(|| BackendProfile::mock(role));
        self.chat.insert(role, ChatBinding { profile, backend });
        self
    }

    pub fn with_embed_backend(mut self, backend: Arc<dyn EmbedBackend>) -> Self {
        let profile = self
            .embedder
            .as_ref()
            .map(|b| b.profile.clone())
            .unwrap_or_else(|| BackendProfile::mock(Role::Embedder));
        self.embedder = Some(EmbedBinding { profile, backend });
        self
    }

    /// Adjusts retry settings of every bound profile (tests use short backoffs).
    pub fn with_retry_policy(mut self, max_retries: u32, backoff_base_ms: u64) -> Self {
        for b in self.chat.values_mut() {
            b.profile.max_retries = max_retries;
            b.profile.backoff_base_ms = backoff_base_ms;
        }
        if let Some(b) = self.embedder.as_mut() {
            b.profile.max_retries = max_retries;
            b.profile.backoff_base_ms = backoff_base_ms;
        }
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    /// Attaches a fixture file. Replay mode fails on unknown requests; record
    /// mode forwards to the backend and stores every response.
    pub fn with_fixtures(mut self, path: impl Into<PathBuf>, mode: FixtureMode) -> Result<Self, GatewayError> {
        let path = path.into();
        let store = match mode {
            FixtureMode::Replay => FixtureStore::load(&path)?,
            FixtureMode::Record => {
                if path.exists() {
                    FixtureStore::load(&path)?
                } else {
                    FixtureStore::default()
                }
            }
        };
        self.fixtures = Some(FixtureLayer { mode, path, store: Mutex::new(store) });
        Ok(self)
    }

    /// Writes recorded fixtures back to disk (no-op unless recording).
    pub fn save_fixtures(&self) -> Result<(), GatewayError> {
        if let Some(layer) = &self.fixtures {
            if layer.mode == FixtureMode::Record {
                layer.store.lock().save(&layer.path)?;
            }
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.tokenizer.count(text)
    }

    pub fn max_inflight(&self) -> usize {
        self.limiter.capacity()
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().clear();
    }

    pub fn chat(&self, role: Role, template: &PromptTemplate, vars: &Vars) -> Result<ChatReply, GatewayError> {
        let prompt = template.render(vars)?;
        let binding = self.chat.get(&role).ok_or(GatewayError::UnboundRole(role))?;
        let started = Instant::now();
        let key = FixtureStore::chat_key(role, template.template_id, vars);

        if let Some(layer) = &self.fixtures {
            if layer.mode == FixtureMode::Replay {
                let text = layer.store.lock().chat.get(&key).cloned().ok_or_else(|| GatewayError::FixtureMiss(key.clone()))?;
                let record = self.record(role, template.template_id, &prompt, &text, None, started, 0);
                return Ok(ChatReply { text, record });
            }
        }

        let request = ChatRequest {
            template_id: template.template_id,
            vars,
            prompt: &prompt,
            temperature: binding.profile.temperature(),
        };
        let (completion, retries) = self.with_retries(&binding.profile, || binding.backend.complete(&request))?;
        if let Some(layer) = &self.fixtures {
            layer.store.lock().chat.insert(key, completion.text.clone());
        }
        let record = self.record(role, template.template_id, &prompt, &completion.text, completion.usage, started, retries);
        Ok(ChatReply { text: completion.text, record })
    }

    /// Embeds texts, one unit-norm vector per input, order preserved.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let binding = self.embedder.as_ref().ok_or(GatewayError::UnboundRole(Role::Embedder))?;
        let started = Instant::now();
        let raw = match &self.fixtures {
            Some(layer) if layer.mode == FixtureMode::Replay => {
                let store = layer.store.lock();
                texts
                    .iter()
                    .map(|t| {
                        let key = FixtureStore::embed_key(t);
                        store.embed.get(&key).cloned().ok_or(GatewayError::FixtureMiss(key))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            _ => {
                let (vectors, _) = self.with_retries(&binding.profile, || binding.backend.embed(texts))?;
                if let Some(layer) = &self.fixtures {
                    let mut store = layer.store.lock();
                    for (t, v) in texts.iter().zip(&vectors) {
                        store.embed.insert(FixtureStore::embed_key(t), v.clone());
                    }
                }
                vectors
            }
        };
        if raw.len() != texts.len() {
            return Err(GatewayError::BadEmbedding(format!("{} vectors for {} inputs", raw.len(), texts.len())));
        }
        let dim = raw[0].len();
        if raw.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::BadEmbedding("mixed dimensions".into()));
        }
        let out = raw
            .into_iter()
            .map(|v| EmbeddingVector::normalized(v).map_err(|e| GatewayError::BadEmbedding(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let prompt_tokens = texts.iter().map(|t| self.tokenizer.count(t)).sum();
        self.log.lock().push(CallRecord {
            role: Role::Embedder,
            template_id: "embed".into(),
            prompt_tokens,
            completion_tokens: 0,
            latency_ms: started.elapsed().as_millis() as u64,
            retry_count: 0,
        });
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    fn with_retries<T>(
        &self,
        profile: &BackendProfile,
        mut attempt: impl FnMut() -> Result<T, BackendFailure>,
    ) -> Result<(T, u32), GatewayError> {
        let mut retries = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                attempt()
            };
            match result {
                Ok(v) => return Ok((v, retries)),
                Err(failure) if failure.transient && retries < profile.max_retries => {
                    tracing::warn!(role = %profile.role, retry = retries + 1, "transient backend failure: {}", failure.message);
                    std::thread::sleep(profile.backoff(retries));
                    retries += 1;
                }
                Err(failure) => {
                    return Err(GatewayError::BackendUnavailable { attempts: retries + 1, reason: failure.message });
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        role: Role,
        template_id: &str,
        prompt: &str,
        text: &str,
        usage: Option<(usize, usize)>,
        started: Instant,
        retries: u32,
    ) -> CallRecord {
        let (prompt_tokens, completion_tokens) =
            usage.unwrap_or_else(|| (self.tokenizer.count(prompt), self.tokenizer.count(text)));
        let record = CallRecord {
            role,
            template_id: template_id.to_string(),
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            retry_count: retries,
        };
        self.log.lock().push(record.clone());
        record
    }
}
