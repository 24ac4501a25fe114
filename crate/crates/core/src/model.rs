//! Core domain types and validated ingestion of multi-session histories.
//!
//! The on-disk history format is JSON Lines: an optional header object
//! `{"history_id": .., "persona_refs": [..]}` followed by one session object per
//! line. Sessions are re-sorted by timestamp on parse; equal timestamps keep
//! their input order.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Tokenizer;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("duplicate session id {0:?}")]
    DuplicateSessionId(String),
    #[error("session {0:?} has no turns")]
    EmptySession(String),
    #[error("session {0:?} has an unparseable timestamp")]
    BadTimestamp(String),
    #[error("session {0:?} has an empty utterance")]
    EmptyUtterance(String),
    #[error("session {0:?} does not open with a user turn")]
    FirstTurnNotUser(String),
    #[error("fact {fact_id:?} points at unknown session {session_id:?}")]
    DanglingFact { fact_id: String, session_id: String },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(&'static str),
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => f.write_str("User"),
            Speaker::Assistant => f.write_str("Assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Speaker::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Speaker::Assistant, text: text.into() }
    }
}

mod timestamp_format {
    use super::TIMESTAMP_FORMAT;
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&raw, TIMESTAMP_FORMAT).map_err(serde::de::Error::custom)
    }
}

/// One dialogue session. Fields are public so pipelines can assemble sessions
/// directly; [`Session::validate`] enforces the invariants parse relies on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    #[serde(with = "timestamp_format")]
    pub timestamp: NaiveDateTime,
    #[serde(default)]
    pub tags: Vec<String>,
    pub turns: Vec<Utterance>,
}

impl Session {
    pub fn validate(&self) -> Result<(), ModelError> {
        let first = self
            .turns
            .first()
            .ok_or_else(|| ModelError::EmptySession(self.session_id.clone()))?;
        if self.turns.iter().any(|t| t.text.trim().is_empty()) {
            return Err(ModelError::EmptyUtterance(self.session_id.clone()));
        }
        if first.role != Speaker::User {
            return Err(ModelError::FirstTurnNotUser(self.session_id.clone()));
        }
        Ok(())
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// "User: ..." / "Assistant: ..." lines, as shown to the extraction prompt.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.role, t.text.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// All turn texts joined by spaces.
    pub fn plain_text(&self) -> String {
        self.turns.iter().map(|t| t.text.trim()).collect::<Vec<_>>().join(" ")
    }

    pub fn timestamp_string(&self) -> String {
        self.timestamp.format(TIMESTAMP_FORMAT).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub history_id: String,
    #[serde(default)]
    pub persona_refs: Vec<String>,
    pub sessions: Vec<Session>,
}

#[derive(Serialize, Deserialize)]
struct HistoryHeader {
    history_id: String,
    #[serde(default)]
    persona_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct RawSession {
    session_id: String,
    timestamp: String,
    #[serde(default)]
    tags: Vec<String>,
    turns: Vec<Utterance>,
}

impl ConversationHistory {
    /// Builds a history from sessions, validating and sorting them.
    pub fn new(
        history_id: impl Into<String>,
        persona_refs: Vec<String>,
        mut sessions: Vec<Session>,
    ) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for s in &sessions {
            if !seen.insert(s.session_id.as_str()) {
                return Err(ModelError::DuplicateSessionId(s.session_id.clone()));
            }
            s.validate()?;
        }
        // stable: equal timestamps keep input order
        sessions.sort_by_key(|s| s.timestamp);
        Ok(Self { history_id: history_id.into(), persona_refs, sessions })
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.session_id == id)
    }

    pub fn session_index(&self, id: &str) -> Option<usize> {
        self.sessions.iter().position(|s| s.session_id == id)
    }
}

/// Parses the JSONL wire format. A header line is optional; without one the
/// history id is empty and callers may fill it in.
pub fn parse_history(raw: &[u8]) -> Result<ConversationHistory, ModelError> {
    let text = std::str::from_utf8(raw).map_err(|_| ModelError::NotUtf8)?;
    let mut header: Option<HistoryHeader> = None;
    let mut sessions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|_| ModelError::MalformedLine(line_no))?;
        let obj = value.as_object().ok_or(ModelError::MalformedLine(line_no))?;
        if obj.contains_key("session_id") {
            let raw: RawSession =
                serde_json::from_value(value).map_err(|_| ModelError::MalformedLine(line_no))?;
            let timestamp = NaiveDateTime::parse_from_str(&raw.timestamp, TIMESTAMP_FORMAT)
                .map_err(|_| ModelError::BadTimestamp(raw.session_id.clone()))?;
            sessions.push(Session {
                session_id: raw.session_id,
                timestamp,
                tags: raw.tags,
                turns: raw.turns,
            });
        } else if obj.contains_key("history_id") && header.is_none() {
            header = Some(serde_json::from_value(value).map_err(|_| ModelError::MalformedLine(line_no))?);
        } else {
            return Err(ModelError::MalformedLine(line_no));
        }
    }
    let header = header.unwrap_or(HistoryHeader {
        history_id: String::new(),
        persona_refs: Vec::new(),
        config: None,
    });
    ConversationHistory::new(header.history_id, header.persona_refs, sessions)
}

/// Reads a history from a JSONL file, or from every `*.jsonl` file of a
/// directory concatenated in file-name order. A missing history id defaults
/// to the file stem / directory name.
pub fn read_history(path: &Path) -> Result<ConversationHistory, ModelError> {
    let io_err = |source| ModelError::Io { path: path.display().to_string(), source };
    let mut raw = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for f in files {
            let bytes = std::fs::read(&f).map_err(|source| ModelError::Io {
                path: f.display().to_string(),
                source,
            })?;
            raw.extend_from_slice(&bytes);
            if !raw.ends_with(b"\n") {
                raw.push(b'\n');
            }
        }
    } else {
        raw = std::fs::read(path).map_err(io_err)?;
    }
    let mut history = parse_history(&raw)?;
    if history.history_id.is_empty() {
        history.history_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(history)
}

/// Serializes to the JSONL wire format (header line first).
pub fn serialize_history(h: &ConversationHistory) -> Vec<u8> {
    serialize_history_with_config(h, None)
}

/// Like [`serialize_history`], embedding a config snapshot in the header line.
pub fn serialize_history_with_config(
    h: &ConversationHistory,
    config: Option<serde_json::Value>,
) -> Vec<u8> {
    let mut out = Vec::new();
    let header = HistoryHeader {
        history_id: h.history_id.clone(),
        persona_refs: h.persona_refs.clone(),
        config,
    };
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    for s in &h.sessions {
        out.extend(serde_json::to_vec(s).expect("session serializes"));
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStats {
    pub session_count: usize,
    pub turn_count: usize,
    pub total_tokens: usize,
}

/// Exact counts over a validated history.
pub fn history_stats(h: &ConversationHistory, tokenizer: &dyn Tokenizer) -> HistoryStats {
    let turn_count = h.sessions.iter().map(|s| s.turns.len()).sum();
    let total_tokens = h
        .sessions
        .iter()
        .flat_map(|s| s.turns.iter())
        .map(|t| tokenizer.count(&t.text))
        .sum();
    HistoryStats { session_count: h.sessions.len(), turn_count, total_tokens }
}

/// A unit-free embedding. Always finite and non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidEmbedding("empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidEmbedding("non-finite entry"));
        }
        Ok(Self(values))
    }

    /// Scales to unit L2 norm; the zero vector is left unchanged.
    pub fn normalized(values: Vec<f32>) -> Result<Self, ModelError> {
        let norm = values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            Self::new(values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect())
        } else {
            Self::new(values)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| f64::from(*v)).collect()
    }

    /// Cosine similarity. Bitwise-identical vectors score exactly 1; a zero
    /// vector scores 0 against anything.
    pub fn cosine(&self, other: &Self) -> f64 {
        cosine(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = ModelError;
    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub fact_id: String,
    pub source_session_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub token_count: usize,
}

/// Every fact must point at a session of `h`.
pub fn check_fact_provenance(h: &ConversationHistory, facts: &[Fact]) -> Result<(), ModelError> {
    let ids: HashSet<&str> = h.sessions.iter().map(|s| s.session_id.as_str()).collect();
    for f in facts {
        if !ids.contains(f.source_session_id.as_str()) {
            return Err(ModelError::DanglingFact {
                fact_id: f.fact_id.clone(),
                session_id: f.source_session_id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    #[default]
    UmapLike,
    Pca,
}

/// How a tree level is sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LevelSizing {
    /// Exactly `max(1, floor(n / k))` nodes per level; fan-out may reach
    /// `ceil(n / nodes)` when `k` does not divide `n`.
    #[default]
    Exact,
    /// Fan-out never exceeds `k`; levels may hold more nodes than the floor count.
    StrictCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Maximum cluster size.
    #[serde(rename = "k")]
    pub max_cluster_size: usize,
    /// A level with fewer nodes than this becomes the root set.
    #[serde(rename = "L")]
    pub root_size: usize,
    /// Trait-similarity threshold used by the corpus pipeline.
    pub beta: f64,
    pub reducer_dims: usize,
    pub reducer: ReducerKind,
    pub level_sizing: LevelSizing,
    pub seed: u64,
    pub max_inflight: usize,
    /// Cosine threshold for near-duplicate fact suppression.
    pub dedupe_threshold: f64,
    /// Extract facts from assistant turns as well as user turns.
    pub include_assistant_turns: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            max_cluster_size: 6,
            root_size: 15,
            beta: 0.4,
            reducer_dims: 10,
            reducer: ReducerKind::UmapLike,
            level_sizing: LevelSizing::Exact,
            seed: 0,
            max_inflight: 4,
            dedupe_threshold: 0.95,
            include_assistant_turns: false,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.max_cluster_size < 2 {
            return bad("k must be at least 2");
        }
        if self.root_size < 1 {
            return bad("L must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if self.reducer_dims == 0 {
            return bad("reducer_dims must be positive");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be positive");
        }
        if !(0.0..=1.0).contains(&self.dedupe_threshold) {
            return bad("dedupe threshold must lie in [0, 1]");
        }
        Ok(())
    }
}
