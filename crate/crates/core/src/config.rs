//! On-disk run configuration (TOML).
//!
//! ```toml
//! seed = 7
//! backend = "mock"          # or "http"
//! max_inflight = 8
//!
//! [build]                   # tree construction
//! k = 6
//! L = 15
//!
//! [retrieval]
//! max_selected_per_level = 8
//!
//! [eval]
//! k_top = 10
//!
//! [corpus]
//! traits_per_example = 7
//!
//! [paths]
//! history = "data/history.jsonl"
//!
//! [[profiles]]              # required when backend = "http"
//! role = "framework"
//! kind = "http_chat"
//! endpoint = "https://api.example.com/v1/chat/completions"
//! model_name = "some-model"
//! api_key_env = "FRAMEWORK_API_KEY"
//! ```
//!
//! Secrets never live in this file; profiles name the environment variable
//! holding each key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ExampleConfig;
use crate::eval::EvalConfig;
use crate::gateway::{BackendProfile, Gateway, GatewayError, Role};
use crate::model::BuildConfig;
use crate::retrieve::RetrievalConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Paths {
    pub history: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendChoice,
    pub max_inflight: usize,
    pub fixtures: Option<PathBuf>,
    pub profiles: Vec<BackendProfile>,
    pub build: BuildConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
    pub corpus: ExampleConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendChoice::Mock,
            max_inflight: 8,
            fixtures: None,
            profiles: Vec::new(),
            build: BuildConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
            corpus: ExampleConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Sets the run seed and propagates it to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.build.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.corpus.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.max_inflight == 0 {
            return Err(ConfigError::Invalid("max_inflight must be at least 1".into()));
        }
        if self.backend == BackendChoice::Http {
            for role in Role::ALL {
                if !self.profiles.iter().any(|p| p.role == role) {
                    return Err(ConfigError::Invalid(format!("backend = \"http\" but no profile for role {role}")));
                }
            }
            for p in &self.profiles {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Profiles in effect: all-mock, or the configured ones.
    pub fn effective_profiles(&self) -> Vec<BackendProfile> {
        match self.backend {
            BackendChoice::Mock => Role::ALL.iter().map(|r| BackendProfile::mock(*r)).collect(),
            BackendChoice::Http => self.profiles.clone(),
        }
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        Ok(Gateway::from_profiles(&self.effective_profiles(), self.max_inflight)?)
    }

    /// Config snapshot embedded in artifacts. API key variable names are kept,
    /// never their values.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_toml("seed = 5\n[build]\nk = 4\nL = 10\n[eval]\nk_top = 3\n").unwrap();
        assert_eq!(cfg.build.max_cluster_size, 4);
        assert_eq!(cfg.build.root_size, 10);
        assert_eq!(cfg.build.seed, 5);
        assert_eq!(cfg.corpus.seed, 5);
        assert_eq!(cfg.eval.k_top, 3);
        assert_eq!(cfg.retrieval, RetrievalConfig::default());
        cfg.validate().unwrap();
        cfg.gateway().unwrap();
    }

    #[test]
    fn http_needs_every_role() {
        let text = r#"
backend = "http"
[[profiles]]
role = "framework"
kind = "http_chat"
endpoint = "http://localhost:1/v1"
model_name = "m"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.profiles[0].kind, BackendKind::HttpChat);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(ConfigError::Parse(_))));
        let cfg = RunConfig::from_toml("[retrieval]\nbatch_size = 0\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::default().with_seed(3);
        let back: RunConfig = serde_json::from_value(cfg.snapshot()).unwrap();
        assert_eq!(back, cfg);
    }
}
