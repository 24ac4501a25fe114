//! Evaluation corpora with implicit evidence.
//!
//! A persona trait is paired with scenarios that silently change (opposed) or
//! support (supportive) it. Scenarios too similar to the trait are filtered
//! out, one opposed scenario is chosen as the hidden evidence, and the trait,
//! evidence, distractors and noise sessions are expanded into dialogue and
//! interleaved into a roughly 100-session history.

pub mod assemble;
pub mod persona;
pub mod pool;
pub mod qa;
pub mod scenarios;
pub mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::model::ModelError;

pub use assemble::{generate_example, write_example, Example, ExampleConfig, KindSelection};
pub use persona::standardize_persona;
pub use pool::{load_pool, synthetic_pool, PoolSource, SAMPLE_PERSONAS};
pub use qa::{make_opposed_qa, make_supportive_qa};
pub use scenarios::{filter_by_similarity, generate_distractors, generate_scenarios, select_opposed_best, verify_supportive};
pub use session::{expand_to_session, parse_transcript, relabel_alternating};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("model output could not be parsed: {0}")]
    UnparseableOutput(String),
    #[error("trait {trait_id}: only {usable} usable scenarios")]
    TooFewScenarios { trait_id: String, usable: usize },
    #[error("trait {0}: no filtered opposed scenario to select from")]
    NoCandidates(String),
    #[error("trait {0}: no valid question after one re-ask")]
    QuestionTooLong(String),
    #[error("session {0}: transcript could not be parsed")]
    UnparseableTranscript(String),
    #[error("need at least {needed} sessions, only {available} available")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("constraint unsatisfiable: {0}")]
    ConstraintUnsatisfiable(String),
    #[error("invalid scenario kind: {0}")]
    InvalidKind(&'static str),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitCategory {
    Demographics,
    Career,
    Everyday,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaTrait {
    pub trait_id: String,
    /// Single sentence starting with exactly "This person".
    pub text: String,
    pub category: TraitCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Opposed,
    Supportive,
    Distractor,
}

/// raw -> filtered -> {selected | verified | rejected}; raw may also go
/// straight to rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Raw,
    Filtered,
    Selected,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningScenario {
    pub scenario_id: String,
    pub trait_id: String,
    pub kind: ScenarioKind,
    pub text: String,
    pub similarity_to_trait: Option<f64>,
    pub similarity_to_question: Option<f64>,
    pub status: ScenarioStatus,
    /// Trait similarity within the review band around the threshold.
    #[serde(default)]
    pub near_threshold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningKind {
    Opposed,
    Supportive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTask {
    pub task_id: String,
    pub trait_id: String,
    pub kind: ReasoningKind,
    pub question: String,
    pub gold_answer: String,
    /// Sessions holding the selected or verified scenarios.
    pub evidence_session_ids: Vec<String>,
    pub yes_no: bool,
    /// The session stating the trait itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trait_session_id: Option<String>,
    /// Distractor and pool sessions injected for this task.
    #[serde(default)]
    pub noise_session_ids: Vec<String>,
}

/// Parses a tasks file: one JSON object per line.
pub fn parse_tasks(raw: &str) -> Result<Vec<QaTask>, CorpusError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CorpusError::UnparseableOutput(format!("tasks line {}: {e}", i + 1))))
        .collect()
}

pub fn serialize_tasks(tasks: &[QaTask]) -> String {
    tasks.iter().map(|t| serde_json::to_string(t).expect("task serializes") + "\n").collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewReason {
    NearThreshold,
    SelectionFallback,
    VerificationRejected,
    DistractorShortfall,
    ValidationWarning,
    TraitSkipped,
}

/// An automated decision a human may want to double-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub reason: ReviewReason,
    pub trait_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub detail: String,
}
