//! Level-order retrieval with relevance judging and subtree pruning.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::gateway::{prompts, vars, Gateway, GatewayError, Role};
use crate::model::{cosine, Fact};
use crate::tree::MemoryTree;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("tree has no nodes")]
    EmptyTree,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Summaries,
    Facts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub max_selected_per_level: usize,
    pub fallback_top_m: usize,
    pub answer_granularity: Granularity,
    pub batch_size: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { max_selected_per_level: 8, fallback_top_m: 2, answer_granularity: Granularity::Summaries, batch_size: 15 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.batch_size == 0 {
            return Err(RetrieveError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_selected_per_level == 0 {
            return Err(RetrieveError::InvalidConfig("max_selected_per_level must be at least 1".into()));
        }
        if self.fallback_top_m > self.max_selected_per_level {
            return Err(RetrieveError::InvalidConfig("fallback_top_m exceeds max_selected_per_level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub selected_per_level: BTreeMap<usize, Vec<String>>,
    pub leaf_summaries: Vec<String>,
    pub facts: Vec<Fact>,
    pub judge_calls: usize,
    pub judged_nodes: usize,
    pub retrieved_tokens: usize,
    pub used_fallback: bool,
    pub granularity: Granularity,
}

impl RetrievalResult {
    pub fn fact_ids(&self) -> BTreeSet<String> {
        self.facts.iter().map(|f| f.fact_id.clone()).collect()
    }

    pub fn session_ids(&self) -> BTreeSet<String> {
        self.facts.iter().map(|f| f.source_session_id.clone()).collect()
    }

    /// The text handed to the answering model.
    pub fn context(&self) -> String {
        match self.granularity {
            Granularity::Summaries => self.leaf_summaries.join("\n"),
            Granularity::Facts => self.facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join("\n"),
        }
    }
}

/// Outcome of one judged batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgement {
    pub selected: Vec<String>,
    pub calls: usize,
    /// Set when the batch reply was unparseable and per-candidate calls were made.
    pub fell_back: bool,
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Indices (1-based, in range, first occurrence order) listed in a reply;
/// `None` when the reply is neither an index list nor `NONE`.
pub fn parse_index_list(reply: &str, n: usize) -> Option<Vec<usize>> {
    let trimmed = reply.trim();
    if trimmed.to_ascii_uppercase().starts_with("NONE") {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut saw_number = false;
    for token in trimmed.split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty()) {
        saw_number = true;
        if let Ok(i) = token.parse::<usize>() {
            if (1..=n).contains(&i) && !out.contains(&i) {
                out.push(i);
            }
        }
    }
    saw_number.then_some(out)
}

/// Asks which candidates help answer `query`. At most `cap` ids are returned,
/// in the order the judge listed them.
pub fn judge_relevance(
    gw: &Gateway,
    query: &str,
    candidates: &[(String, String)],
    cap: usize,
) -> Result<Judgement, GatewayError> {
    if candidates.is_empty() {
        return Ok(Judgement { selected: Vec::new(), calls: 0, fell_back: false });
    }
    let listing = candidates
        .iter()
        .enumerate()
        .map(|(i, (_, text))| format!("[{}] {}", i + 1, flatten(text)))
        .collect::<Vec<_>>()
        .join("\n");
    let reply = gw.chat(Role::Framework, &prompts::RELEVANCE_BATCH, &vars([("query", query.into()), ("candidates", listing)]))?;
    let (indices, calls, fell_back) = match parse_index_list(&reply.text, candidates.len()) {
        Some(ix) => (ix, 1, false),
        None => {
            debug!(reply = %reply.text, "unparseable relevance reply; judging one by one");
            let mut ix = Vec::new();
            for (i, (_, text)) in candidates.iter().enumerate() {
                let r = gw.chat(
                    Role::Framework,
                    &prompts::RELEVANCE_SINGLE,
                    &vars([("query", query.into()), ("candidate", flatten(text))]),
                )?;
                if r.text.trim().to_ascii_uppercase().starts_with("YES") {
                    ix.push(i + 1);
                }
            }
            (ix, 1 + candidates.len(), true)
        }
    };
    let selected = indices.into_iter().take(cap).map(|i| candidates[i - 1].0.clone()).collect();
    Ok(Judgement { selected, calls, fell_back })
}

/// Judges `candidates` in batches of `batch_size`; the cap applies per call.
fn judge_batched(
    gw: &Gateway,
    query: &str,
    candidates: &[(String, String)],
    rcfg: &RetrievalConfig,
) -> Result<(Vec<String>, usize), GatewayError> {
    let mut selected = Vec::new();
    let mut calls = 0;
    for chunk in candidates.chunks(rcfg.batch_size) {
        let j = judge_relevance(gw, query, chunk, rcfg.max_selected_per_level)?;
        selected.extend(j.selected);
        calls += j.calls;
    }
    Ok((selected, calls))
}

fn node_index(id: &str) -> usize {
    id.rsplit('-').next().and_then(|i| i.parse().ok()).unwrap_or(usize::MAX)
}

/// Orders facts by (session timestamp, fact id); unknown sessions sort first.
pub fn order_facts(facts: &mut [Fact], timestamps: &BTreeMap<String, String>) {
    facts.sort_by(|a, b| {
        let ta = timestamps.get(&a.source_session_id).map(String::as_str).unwrap_or("");
        let tb = timestamps.get(&b.source_session_id).map(String::as_str).unwrap_or("");
        ta.cmp(tb).then_with(|| a.fact_id.cmp(&b.fact_id))
    });
}

fn payload_tokens(gw: &Gateway, granularity: Granularity, leaf_summaries: &[String], facts: &[Fact]) -> usize {
    match granularity {
        Granularity::Summaries => leaf_summaries.iter().map(|s| gw.count_tokens(s)).sum(),
        Granularity::Facts => facts.iter().map(|f| f.token_count).sum(),
    }
}

/// Children chosen under one parent, with judge calls and judged nodes spent.
type ChildPick = (Vec<String>, usize, usize);

/// Starts from every root node, judges the children of selected parents
/// level by level, and returns the fact sets of the selected leaves.
pub fn retrieve(gw: &Gateway, tree: &MemoryTree, query: &str, rcfg: &RetrievalConfig) -> Result<RetrievalResult, RetrieveError> {
    rcfg.validate()?;
    if tree.levels.is_empty() || tree.roots().is_empty() {
        return Err(RetrieveError::EmptyTree);
    }
    let roots = tree.roots();
    let candidates: Vec<(String, String)> = roots.iter().map(|n| (n.node_id.clone(), n.summary.clone())).collect();
    let (mut selected, mut judge_calls) = judge_batched(gw, query, &candidates, rcfg)?;
    let mut judged_nodes = roots.len();
    let mut used_fallback = false;

    if selected.is_empty() && rcfg.fallback_top_m > 0 {
        let q = gw.embed_one(query)?;
        let missing: Vec<String> = roots.iter().filter(|n| n.embedding.is_none()).map(|n| n.summary.clone()).collect();
        let mut fresh = if missing.is_empty() { Vec::new() } else { gw.embed(&missing)? }.into_iter();
        let mut scored: Vec<(f64, usize)> = roots
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let sim = match &n.embedding {
                    Some(e) => cosine(q.values(), e),
                    None => q.cosine(&fresh.next().expect("one vector per missing embedding")),
                };
                (sim, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        selected = scored.iter().take(rcfg.fallback_top_m).map(|&(_, i)| roots[i].node_id.clone()).collect();
        used_fallback = true;
    }
    selected.sort_by_key(|id| node_index(id));
    selected.dedup();

    let mut selected_per_level = BTreeMap::new();
    selected_per_level.insert(tree.root_level, selected.clone());
    for level in (0..tree.root_level).rev() {
        let parents: Vec<&str> = selected.iter().map(String::as_str).collect();
        let per_parent: Vec<Result<ChildPick, GatewayError>> = parents
            .par_iter()
            .map(|pid| {
                let parent = tree.node(pid).expect("selected ids come from the tree");
                let children: Vec<(String, String)> = parent
                    .child_node_ids
                    .iter()
                    .filter_map(|c| tree.node(c))
                    .map(|c| (c.node_id.clone(), c.summary.clone()))
                    .collect();
                let (picked, calls) = judge_batched(gw, query, &children, rcfg)?;
                Ok((picked, calls, children.len()))
            })
            .collect();
        let mut next = Vec::new();
        for r in per_parent {
            let (picked, calls, shown) = r?;
            next.extend(picked);
            judge_calls += calls;
            judged_nodes += shown;
        }
        next.sort_by_key(|id| node_index(id));
        next.dedup();
        selected_per_level.insert(level, next.clone());
        selected = next;
    }

    let leaves: Vec<_> = selected.iter().filter_map(|id| tree.node(id)).collect();
    let leaf_summaries: Vec<String> = leaves.iter().map(|n| n.summary.clone()).collect();
    let mut seen = BTreeSet::new();
    let mut facts: Vec<Fact> = leaves
        .iter()
        .flat_map(|n| n.fact_ids.iter())
        .filter(|id| seen.insert(id.as_str()))
        .filter_map(|id| tree.fact_store.get(id).cloned())
        .collect();
    order_facts(&mut facts, &tree.session_timestamps);
    let retrieved_tokens = payload_tokens(gw, rcfg.answer_granularity, &leaf_summaries, &facts);
    Ok(RetrievalResult {
        query: query.to_string(),
        selected_per_level,
        leaf_summaries,
        facts,
        judge_calls,
        judged_nodes,
        retrieved_tokens,
        used_fallback,
        granularity: rcfg.answer_granularity,
    })
}

/// Judges every fact individually (batched by `batch_size`, no per-call cap)
/// and returns the relevant ones in input order.
pub fn brute_force_retrieve(gw: &Gateway, facts: &[Fact], query: &str, rcfg: &RetrievalConfig) -> Result<RetrievalResult, RetrieveError> {
    rcfg.validate()?;
    let mut relevant = BTreeSet::new();
    let mut judge_calls = 0;
    for chunk in facts.chunks(rcfg.batch_size) {
        let candidates: Vec<(String, String)> = chunk.iter().map(|f| (f.fact_id.clone(), f.text.clone())).collect();
        let j = judge_relevance(gw, query, &candidates, candidates.len())?;
        relevant.extend(j.selected);
        judge_calls += j.calls;
    }
    let kept: Vec<Fact> = facts.iter().filter(|f| relevant.contains(&f.fact_id)).cloned().collect();
    let retrieved_tokens = kept.iter().map(|f| f.token_count).sum();
    Ok(RetrievalResult {
        query: query.to_string(),
        selected_per_level: BTreeMap::new(),
        leaf_summaries: Vec::new(),
        facts: kept,
        judge_calls,
        judged_nodes: facts.len(),
        retrieved_tokens,
        used_fallback: false,
        granularity: Granularity::Facts,
    })
}

/// Answers `question` with the framework model given a context block.
pub fn answer(gw: &Gateway, question: &str, context: &str) -> Result<String, GatewayError> {
    let reply = gw.chat(Role::Framework, &prompts::ANSWER, &vars([("context", context.into()), ("question", question.into())]))?;
    Ok(reply.text.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendFailure, ChatBackend, ChatRequest, Completion};
    use crate::model::BuildConfig;
    use crate::tree::{TreeNode, SCHEMA_VERSION};
    use std::sync::Arc;

    struct Scripted(&'static str);
    impl ChatBackend for Scripted {
        fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
            let text = if request.template_id == "relevance_single" { "YES" } else { self.0 };
            Ok(Completion { text: text.into(), usage: None })
        }
    }

    fn cands(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("n{i}"), format!("text {i}"))).collect()
    }

    #[test]
    fn mock_judge_examples() {
        let gw = Gateway::mock(1);
        let c = vec![
            ("a".to_string(), "SUM:I will be hiking with a broken ankle.".to_string()),
            ("b".to_string(), "SUM:A recipe for soup.".to_string()),
        ];
        assert_eq!(judge_relevance(&gw, "broken leg hiking", &c, 8).unwrap().selected, ["a"]);
        assert!(judge_relevance(&gw, "quantum flux", &c, 8).unwrap().selected.is_empty());
    }

    #[test]
    fn stub_index_list_is_honoured() {
        let gw = Gateway::mock(1).with_chat_backend(Role::Framework, Arc::new(Scripted("1, 3, 7")));
        let j = judge_relevance(&gw, "q", &cands(15), 8).unwrap();
        assert_eq!(j.selected, ["n0", "n2", "n6"]);
        assert_eq!(j.calls, 1);
    }

    #[test]
    fn junk_is_ignored_and_cap_applies() {
        let gw = Gateway::mock(1).with_chat_backend(Role::Framework, Arc::new(Scripted("[2] and 99, 1, 2, 3, 4")));
        let j = judge_relevance(&gw, "q", &cands(5), 3).unwrap();
        assert_eq!(j.selected, ["n1", "n0", "n2"]);
    }

    #[test]
    fn unparseable_reply_falls_back_to_single_calls() {
        let gw = Gateway::mock(1).with_chat_backend(Role::Framework, Arc::new(Scripted("I think the second one")));
        let j = judge_relevance(&gw, "q", &cands(3), 8).unwrap();
        assert!(j.fell_back);
        assert_eq!(j.calls, 4);
        assert_eq!(j.selected.len(), 3);
    }

    fn leaf(i: usize, summary: &str) -> TreeNode {
        TreeNode {
            node_id: format!("L0-{i}"),
            level: 0,
            summary: summary.into(),
            child_node_ids: vec![],
            fact_ids: vec![format!("f{i}")],
            summary_tokens: 1,
            embedding: None,
        }
    }

    fn flat_tree() -> MemoryTree {
        let texts = ["My cat sleeps all day.", "I twisted my ankle skiing.", "Soup recipes are great."];
        let facts = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                (
                    format!("f{i}"),
                    Fact { fact_id: format!("f{i}"), source_session_id: "s".into(), text: t.to_string(), embedding: None, token_count: 5 },
                )
            })
            .collect();
        let t = MemoryTree {
            tree_id: "t".into(),
            levels: vec![texts.iter().enumerate().map(|(i, t)| leaf(i, &format!("SUM:{t}"))).collect()],
            root_level: 0,
            config_snapshot: BuildConfig::default(),
            fact_store: facts,
            session_timestamps: BTreeMap::new(),
        };
        assert_eq!(SCHEMA_VERSION, 1);
        t.validate().unwrap();
        t
    }

    #[test]
    fn single_level_tree_scan() {
        let gw = Gateway::mock(1);
        let r = retrieve(&gw, &flat_tree(), "can I go skiing this week?", &RetrievalConfig::default()).unwrap();
        assert_eq!(r.fact_ids().into_iter().collect::<Vec<_>>(), ["f1"]);
        assert_eq!(r.judged_nodes, 3);
        assert!(!r.used_fallback);
    }

    #[test]
    fn no_match_without_fallback() {
        let gw = Gateway::mock(1);
        let rcfg = RetrievalConfig { fallback_top_m: 0, ..Default::default() };
        let r = retrieve(&gw, &flat_tree(), "quantum flux", &rcfg).unwrap();
        assert!(r.facts.is_empty());
        assert!(!r.used_fallback);
        assert_eq!(r.judge_calls, 1);
        let r = retrieve(&gw, &flat_tree(), "quantum flux", &RetrievalConfig::default()).unwrap();
        assert!(r.used_fallback);
        assert_eq!(r.selected_per_level[&0].len(), 2);
    }

    #[test]
    fn granularity_changes_payload_only() {
        let gw = Gateway::mock(1);
        let a = retrieve(&gw, &flat_tree(), "skiing", &RetrievalConfig::default()).unwrap();
        let rcfg = RetrievalConfig { answer_granularity: Granularity::Facts, ..Default::default() };
        let b = retrieve(&gw, &flat_tree(), "skiing", &rcfg).unwrap();
        assert_eq!(a.selected_per_level, b.selected_per_level);
        assert_eq!(b.retrieved_tokens, 5);
    }

    #[test]
    fn brute_force_counts_every_fact() {
        let gw = Gateway::mock(1);
        let t = flat_tree();
        let facts: Vec<Fact> = t.fact_store.values().cloned().collect();
        let r = brute_force_retrieve(&gw, &facts, "skiing ankle", &RetrievalConfig::default()).unwrap();
        assert_eq!(r.judged_nodes, 3);
        assert_eq!(r.fact_ids().into_iter().collect::<Vec<_>>(), ["f1"]);
    }

    #[test]
    fn index_parsing() {
        assert_eq!(parse_index_list("NONE", 3), Some(vec![]));
        assert_eq!(parse_index_list("none of them", 3), Some(vec![]));
        assert_eq!(parse_index_list("2, 2, 9", 3), Some(vec![2]));
        assert_eq!(parse_index_list("no idea", 3), None);
    }
}
