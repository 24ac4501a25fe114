use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, Role, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureMode {
    Replay,
    Record,
}

/// Recorded backend responses keyed by a digest of the request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureStore {
    #[serde(default)]
    pub chat: BTreeMap<String, String>,
    #[serde(default)]
    pub embed: BTreeMap<String, Vec<f32>>,
}

fn digest(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl FixtureStore {
    pub fn chat_key(role: Role, template_id: &str, vars: &Vars) -> String {
        let vars_json = serde_json::to_string(vars).expect("string map serializes");
        digest(&["chat", &role.to_string(), template_id, &vars_json])
    }

    pub fn embed_key(text: &str) -> String {
        digest(&["embed", text])
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let bytes = serde_json::to_vec_pretty(self).expect("fixture store serializes");
        std::fs::write(path, bytes).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompts, vars, Gateway};

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.json");
        let v = vars([("text", "alpha beta".into())]);

        let recorder = Gateway::mock(1).with_fixtures(&path, FixtureMode::Record).unwrap();
        let live = recorder.chat(Role::Framework, &prompts::SUMMARIZE_HIGH, &v).unwrap().text;
        let live_vec = recorder.embed_one("alpha").unwrap();
        recorder.save_fixtures().unwrap();

        let replay = Gateway::mock(1).with_fixtures(&path, FixtureMode::Replay).unwrap();
        assert_eq!(replay.chat(Role::Framework, &prompts::SUMMARIZE_HIGH, &v).unwrap().text, live);
        assert_eq!(replay.embed_one("alpha").unwrap(), live_vec);
        let miss = replay.chat(Role::Framework, &prompts::SUMMARIZE_HIGH, &vars([("text", "other".into())]));
        assert!(matches!(miss, Err(GatewayError::FixtureMiss(_))));
    }
}
