//! Recursive clustering and summarization into a leveled memory tree.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, info};

use crate::cluster::{self, cluster_facts_for_level, cluster_for_level, initial_cluster_count, ClusterError};
use crate::gateway::{prompts, vars, Gateway, GatewayError, Role};
use crate::model::{BuildConfig, ConversationHistory, Fact, LevelSizing, ModelError};
use crate::text;

pub const SCHEMA_VERSION: u32 = 1;
pub const TREE_FILE_EXTENSION: &str = ".tacitree.json";

#[derive(Debug, Error)]
pub enum TreeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot build a tree from zero facts")]
    NoFacts,
    #[error("tree store has schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersionMismatch { found: u32 },
    #[error("corrupt node reference: {0}")]
    CorruptNodeRef(String),
    #[error("malformed tree store: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: String,
    pub level: usize,
    pub summary: String,
    #[serde(default)]
    pub child_node_ids: Vec<String>,
    #[serde(default)]
    pub fact_ids: Vec<String>,
    pub summary_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

pub fn node_id(level: usize, index: usize) -> String {
    format!("L{level}-{index}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTree {
    pub tree_id: String,
    pub levels: Vec<Vec<TreeNode>>,
    pub root_level: usize,
    pub config_snapshot: BuildConfig,
    pub fact_store: BTreeMap<String, Fact>,
    /// Session id to timestamp string, used to order retrieved facts.
    pub session_timestamps: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TreeStore {
    schema_version: u32,
    tree_id: String,
    config: BuildConfig,
    root_level: usize,
    nodes: Vec<TreeNode>,
    facts: Vec<Fact>,
    #[serde(default)]
    session_timestamps: BTreeMap<String, String>,
}

/// Summarizes one cluster. Leaves get the detail-preserving prompt, higher
/// levels the one-sentence prompt. An empty reply is retried once, then the
/// first sentence of every input stands in.
pub fn summarize_cluster(gw: &Gateway, texts: &[String], level: usize) -> Result<String, TreeError> {
    let template = if level == 0 { &prompts::SUMMARIZE_LEAF } else { &prompts::SUMMARIZE_HIGH };
    let v = vars([("text", texts.join("\n"))]);
    for _ in 0..2 {
        let reply = gw.chat(Role::Framework, template, &v)?;
        let summary = reply.text.trim();
        if !summary.is_empty() {
            return Ok(summary.to_string());
        }
    }
    let fallback: Vec<String> = texts
        .iter()
        .filter_map(|t| text::sentences(t).into_iter().next().or_else(|| Some(t.trim().to_string())))
        .filter(|s| !s.is_empty())
        .collect();
    Ok(if fallback.is_empty() { "(empty)".to_string() } else { fallback.join(" ") })
}

fn level_config(cfg: &BuildConfig, level: usize) -> BuildConfig {
    BuildConfig { seed: cluster::mix_seed(cfg.seed, level as u64 + 17), ..cfg.clone() }
}

/// Summarizes each member group in parallel and embeds the summaries.
fn make_nodes(
    gw: &Gateway,
    level: usize,
    groups: Vec<(Vec<String>, Vec<String>)>,
    texts: Vec<Vec<String>>,
) -> Result<Vec<TreeNode>, TreeError> {
    let summaries: Vec<String> =
        texts.par_iter().map(|t| summarize_cluster(gw, t, level)).collect::<Result<_, _>>()?;
    let vectors = gw.embed(&summaries)?;
    Ok(groups
        .into_iter()
        .zip(summaries)
        .zip(vectors)
        .enumerate()
        .map(|(i, (((children, facts), summary), v))| TreeNode {
            node_id: node_id(level, i),
            level,
            summary_tokens: gw.count_tokens(&summary),
            summary,
            child_node_ids: children,
            fact_ids: facts,
            embedding: Some(v.values().to_vec()),
        })
        .collect())
}

/// Level 0: cluster the facts and summarize each cluster.
pub fn build_leaves(gw: &Gateway, facts: &[Fact], cfg: &BuildConfig) -> Result<Vec<TreeNode>, TreeError> {
    let assignment = cluster_facts_for_level(facts, &level_config(cfg, 0))?;
    let groups = assignment.groups();
    let texts = groups.iter().map(|g| g.iter().map(|&i| facts[i].text.clone()).collect()).collect();
    let members = groups.iter().map(|g| (Vec::new(), g.iter().map(|&i| facts[i].fact_id.clone()).collect())).collect();
    make_nodes(gw, 0, members, texts)
}

/// Clusters the previous level's summaries into `max(1, floor(n / k))`
/// parents (see [`LevelSizing`]) and summarizes each parent.
pub fn build_level(gw: &Gateway, prev: &[TreeNode], cfg: &BuildConfig) -> Result<Vec<TreeNode>, TreeError> {
    let level = prev.first().map(|n| n.level + 1).ok_or(TreeError::NoFacts)?;
    let mut prev_vectors: Vec<Vec<f32>> = Vec::with_capacity(prev.len());
    let missing: Vec<String> = prev.iter().filter(|n| n.embedding.is_none()).map(|n| n.summary.clone()).collect();
    let mut fresh = if missing.is_empty() { Vec::new() } else { gw.embed(&missing)? }.into_iter();
    for n in prev {
        match &n.embedding {
            Some(e) => prev_vectors.push(e.clone()),
            None => prev_vectors.push(fresh.next().expect("one vector per missing embedding").values().to_vec()),
        }
    }
    let ids: Vec<String> = prev.iter().map(|n| n.node_id.clone()).collect();
    let refs: Vec<&[f32]> = prev_vectors.iter().map(Vec::as_slice).collect();
    let assignment = cluster_for_level(&ids, &refs, &level_config(cfg, level))?;
    let groups = assignment.groups();
    let texts = groups.iter().map(|g| g.iter().map(|&i| prev[i].summary.clone()).collect()).collect();
    let members = groups.iter().map(|g| (g.iter().map(|&i| prev[i].node_id.clone()).collect(), Vec::new())).collect();
    make_nodes(gw, level, members, texts)
}

fn tree_id(facts: &[Fact], cfg: &BuildConfig) -> String {
    let mut h = Sha256::new();
    for f in facts {
        h.update(f.fact_id.as_bytes());
        h.update([0]);
        h.update(f.text.as_bytes());
        h.update([0]);
    }
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    let digest: String = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("tree-{digest}")
}

/// Builds levels until one has fewer than `L` nodes; that level is the root
/// set. Construction also stops when a level fails to shrink.
pub fn build_tree(gw: &Gateway, facts: &[Fact], cfg: &BuildConfig) -> Result<MemoryTree, TreeError> {
    cfg.validate()?;
    if facts.is_empty() {
        return Err(TreeError::NoFacts);
    }
    let mut levels = vec![build_leaves(gw, facts, cfg)?];
    info!(level = 0, nodes = levels[0].len(), "built level");
    while levels.last().expect("non-empty").len() >= cfg.root_size {
        let prev = levels.last().expect("non-empty");
        if prev.len() == 1 {
            break;
        }
        let next = build_level(gw, prev, cfg)?;
        info!(level = levels.len(), nodes = next.len(), "built level");
        let shrunk = next.len() < prev.len();
        levels.push(next);
        if !shrunk {
            break;
        }
    }
    let root_level = levels.len() - 1;
    // Only root embeddings are needed after construction (retrieval fallback).
    for level in &mut levels[..root_level] {
        for n in level.iter_mut() {
            n.embedding = None;
        }
    }
    let fact_store = facts
        .iter()
        .map(|f| (f.fact_id.clone(), Fact { embedding: None, ..f.clone() }))
        .collect();
    let tree = MemoryTree {
        tree_id: tree_id(facts, cfg),
        levels,
        root_level,
        config_snapshot: cfg.clone(),
        fact_store,
        session_timestamps: BTreeMap::new(),
    };
    debug!(tree = %tree.tree_id, root_level, "tree complete");
    Ok(tree)
}

/// Extracts facts from a history and builds its tree.
pub fn build_tree_for_history(gw: &Gateway, history: &ConversationHistory, cfg: &BuildConfig) -> Result<MemoryTree, BuildError> {
    let (facts, dropped) =
        crate::extract::extract_history(gw, history, cfg.include_assistant_turns, cfg.dedupe_threshold)?;
    debug!(facts = facts.len(), dropped, "facts extracted");
    let mut tree = build_tree(gw, &facts, cfg)?;
    tree.session_timestamps =
        history.sessions.iter().map(|s| (s.session_id.clone(), s.timestamp_string())).collect();
    Ok(tree)
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Extract(#[from] crate::extract::ExtractError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl MemoryTree {
    pub fn roots(&self) -> &[TreeNode] {
        &self.levels[self.root_level]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn internal_node_count(&self) -> usize {
        self.levels.iter().skip(1).map(Vec::len).sum()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Looks up a node by id (`L{level}-{index}`).
    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        let (level, index) = id.strip_prefix('L')?.split_once('-')?;
        let node = self.levels.get(level.parse::<usize>().ok()?)?.get(index.parse::<usize>().ok()?)?;
        (node.node_id == id).then_some(node)
    }

    pub fn total_fact_tokens(&self) -> usize {
        self.fact_store.values().map(|f| f.token_count).sum()
    }

    /// Structural checks: ids match positions, children exist one level down,
    /// every non-root node and every fact has exactly one owner, fan-out is
    /// non-empty and, under strict sizing, at most `k`.
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::CorruptNodeRef(m));
        if self.levels.is_empty() || self.root_level != self.levels.len() - 1 {
            return bad(format!("root level {} of {} levels", self.root_level, self.levels.len()));
        }
        let strict = self.config_snapshot.level_sizing == LevelSizing::StrictCap;
        let k = self.config_snapshot.max_cluster_size;
        for (level, nodes) in self.levels.iter().enumerate() {
            if nodes.is_empty() {
                return bad(format!("level {level} is empty"));
            }
            for (i, n) in nodes.iter().enumerate() {
                if n.node_id != node_id(level, i) || n.level != level {
                    return bad(format!("node {} at position L{level}-{i}", n.node_id));
                }
                let members = if level == 0 { &n.fact_ids } else { &n.child_node_ids };
                if members.is_empty() || (level == 0) != n.child_node_ids.is_empty() || (level > 0) != n.fact_ids.is_empty() {
                    return bad(format!("node {} has wrong member kinds", n.node_id));
                }
                if strict && members.len() > k {
                    return bad(format!("node {} exceeds fan-out {k}", n.node_id));
                }
                if n.summary.trim().is_empty() {
                    return bad(format!("node {} has an empty summary", n.node_id));
                }
            }
        }
        for level in 1..self.levels.len() {
            let mut seen = BTreeSet::new();
            for n in &self.levels[level] {
                for c in &n.child_node_ids {
                    match self.node(c) {
                        Some(child) if child.level == level - 1 => {}
                        _ => return bad(format!("{} -> {c}", n.node_id)),
                    }
                    if !seen.insert(c.as_str()) {
                        return bad(format!("{c} has two parents"));
                    }
                }
            }
            if seen.len() != self.levels[level - 1].len() {
                return bad(format!("level {} has orphan nodes", level - 1));
            }
        }
        let mut owned = BTreeSet::new();
        for n in &self.levels[0] {
            for f in &n.fact_ids {
                if !self.fact_store.contains_key(f) {
                    return bad(format!("{} -> missing fact {f}", n.node_id));
                }
                if !owned.insert(f.as_str()) {
                    return bad(format!("fact {f} owned twice"));
                }
            }
        }
        if owned.len() != self.fact_store.len() {
            return bad("some facts belong to no leaf".into());
        }
        Ok(())
    }

    /// Facts reachable from `node_id` by descending child links.
    pub fn descendant_fact_ids(&self, node_id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![node_id.to_string()];
        while let Some(id) = stack.pop() {
            if let Some(n) = self.node(&id) {
                out.extend(n.fact_ids.iter().cloned());
                stack.extend(n.child_node_ids.iter().cloned());
            }
        }
        out
    }

    pub fn persist(&self) -> Vec<u8> {
        let store = TreeStore {
            schema_version: SCHEMA_VERSION,
            tree_id: self.tree_id.clone(),
            config: self.config_snapshot.clone(),
            root_level: self.root_level,
            nodes: self.levels.iter().flatten().cloned().collect(),
            facts: self.fact_store.values().cloned().collect(),
            session_timestamps: self.session_timestamps.clone(),
        };
        let mut bytes = serde_json::to_vec(&store).expect("tree serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn load(bytes: &[u8]) -> Result<Self, TreeError> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| TreeError::Malformed(e.to_string()))?;
        let found = value.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(TreeError::SchemaVersionMismatch { found });
        }
        let store: TreeStore = serde_json::from_value(value).map_err(|e| TreeError::Malformed(e.to_string()))?;
        let depth = store.nodes.iter().map(|n| n.level + 1).max().unwrap_or(0);
        let mut levels = vec![Vec::new(); depth];
        for n in store.nodes {
            levels[n.level].push(n);
        }
        let tree = Self {
            tree_id: store.tree_id,
            levels,
            root_level: store.root_level,
            config_snapshot: store.config,
            fact_store: store.facts.into_iter().map(|f| (f.fact_id.clone(), f)).collect(),
            session_timestamps: store.session_timestamps,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TreeError> {
        std::fs::write(path, self.persist()).map_err(|e| TreeError::Malformed(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &std::path::Path) -> Result<Self, TreeError> {
        let bytes = std::fs::read(path).map_err(|e| TreeError::Malformed(format!("{}: {e}", path.display())))?;
        Self::load(&bytes)
    }
}

/// Expected node count of every level under exact sizing, root level last.
pub fn expected_level_sizes(n_facts: usize, k: usize, root_size: usize) -> Vec<usize> {
    let mut sizes = vec![initial_cluster_count(n_facts, k)];
    while let Some(&last) = sizes.last() {
        if last < root_size || last == 1 {
            break;
        }
        let next = initial_cluster_count(last, k);
        sizes.push(next);
        if next >= last {
            break;
        }
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::embed_facts;

    pub(crate) fn synthetic_facts(gw: &Gateway, n: usize) -> Vec<Fact> {
        let mut facts: Vec<Fact> = (0..n)
            .map(|i| Fact {
                fact_id: format!("f{i:04}"),
                source_session_id: format!("s{}", i / 5),
                text: format!("Fact number {i} mentions topic{} and item{}.", i % 7, i),
                embedding: None,
                token_count: 3,
            })
            .collect();
        embed_facts(gw, &mut facts).unwrap();
        facts
    }

    #[test]
    fn level_arithmetic() {
        let gw = Gateway::mock(4);
        let cfg = BuildConfig::default();
        let t = build_tree(&gw, &synthetic_facts(&gw, 100), &cfg).unwrap();
        assert_eq!(t.level_sizes(), [16, 2]);
        assert_eq!(t.root_level, 1);
        t.validate().unwrap();

        let t = build_tree(&gw, &synthetic_facts(&gw, 30), &cfg).unwrap();
        assert_eq!(t.level_sizes(), [5]);
        assert_eq!(t.root_level, 0);
        assert_eq!(expected_level_sizes(100, 6, 15), [16, 2]);
        assert_eq!(expected_level_sizes(30, 6, 15), [5]);
    }

    #[test]
    fn single_node_level_is_wrapped() {
        let gw = Gateway::mock(1);
        let leaves = build_leaves(&gw, &synthetic_facts(&gw, 3), &BuildConfig::default()).unwrap();
        assert_eq!(leaves.len(), 1);
        let parents = build_level(&gw, &leaves, &BuildConfig::default()).unwrap();
        assert_eq!(parents.len(), 1);
        assert_eq!(parents[0].child_node_ids, ["L0-0"]);
    }

    #[test]
    fn summaries_follow_mock_contract() {
        let gw = Gateway::mock(1);
        assert_eq!(summarize_cluster(&gw, &["a b".into(), "c d".into()], 0).unwrap(), "SUM:a b c d");
        assert_eq!(summarize_cluster(&gw, &["solo".into()], 2).unwrap(), "SUM:solo");
    }

    #[test]
    fn persist_round_trip_and_tamper() {
        let gw = Gateway::mock(2);
        let t = build_tree(&gw, &synthetic_facts(&gw, 100), &BuildConfig::default()).unwrap();
        let bytes = t.persist();
        assert_eq!(MemoryTree::load(&bytes).unwrap(), t);

        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let nodes = value["nodes"].as_array_mut().unwrap();
        nodes.last_mut().unwrap()["child_node_ids"][0] = "L0-999".into();
        let tampered = serde_json::to_vec(&value).unwrap();
        assert!(matches!(MemoryTree::load(&tampered), Err(TreeError::CorruptNodeRef(_))));
        let wrong = String::from_utf8(bytes).unwrap().replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        assert!(matches!(MemoryTree::load(wrong.as_bytes()), Err(TreeError::SchemaVersionMismatch { found: 2 })));
    }

    #[test]
    fn strict_cap_sizing_bounds_fan_out() {
        let gw = Gateway::mock(2);
        let cfg = BuildConfig { level_sizing: LevelSizing::StrictCap, ..BuildConfig::default() };
        let t = build_tree(&gw, &synthetic_facts(&gw, 100), &cfg).unwrap();
        t.validate().unwrap();
        assert!(t.levels[0].len() >= 17);
    }
}
