//! Retrieval and answering metrics, strategy runs and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::{QaTask, ReasoningKind};
use crate::gateway::{prompts, vars, Gateway, GatewayError, Role};
use crate::model::{cosine, history_stats, ConversationHistory, Fact};
use crate::retrieve::{answer, brute_force_retrieve, order_facts, retrieve, Granularity, RetrievalConfig, RetrieveError};
use crate::tree::MemoryTree;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("strategy {0} needs a memory tree")]
    MissingTree(Strategy),
    #[error("fact {0} has no embedding")]
    MissingEmbedding(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("report aggregates do not match its records: {0}")]
    AggregateMismatch(String),
    #[error("report parse error: {0}")]
    Parse(String),
}

/// `2|r ∩ g| / (|r| + |g|)`; 1 when both sets are empty.
pub fn retrieval_f1(retrieved: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let denom = retrieved.len() + gold.len();
    if denom == 0 {
        return 1.0;
    }
    let hit = retrieved.intersection(gold).count();
    2.0 * hit as f64 / denom as f64
}

/// `1 - cos(E(question), E(answer))`, in `[0, 2]`.
pub fn implicitness_score(gw: &Gateway, question: &str, answer: &str) -> Result<f64, EvalError> {
    if question.trim().is_empty() || answer.trim().is_empty() {
        return Err(EvalError::EmptyInput("question or answer"));
    }
    let v = gw.embed(&[question.to_string(), answer.to_string()])?;
    Ok((1.0 - v[0].cosine(&v[1])).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub correct: bool,
    pub calls: usize,
    /// The judge never produced a parseable verdict.
    pub flagged: bool,
}

fn parse_yes_no(reply: &str) -> Option<bool> {
    let first = reply.split(|c: char| !c.is_alphabetic()).find(|w| !w.is_empty())?;
    match first.to_ascii_uppercase().as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

/// Semantic equivalence by the judge model; byte-equal answers short-circuit.
pub fn judge_answer(gw: &Gateway, question: &str, predicted: &str, gold: &str) -> Result<JudgeOutcome, EvalError> {
    if predicted == gold {
        return Ok(JudgeOutcome { correct: true, calls: 0, flagged: false });
    }
    for attempt in 0..2 {
        let mut v = vars([("question", question.into()), ("gold", gold.into()), ("predicted", predicted.into())]);
        if attempt > 0 {
            v.insert("attempt".into(), attempt.to_string());
        }
        let reply = gw.chat(Role::Judge, &prompts::JUDGE_ANSWER, &v)?;
        if let Some(correct) = parse_yes_no(&reply.text) {
            return Ok(JudgeOutcome { correct, calls: attempt + 1, flagged: false });
        }
    }
    warn!(question, "judge verdict unparseable; counting as incorrect");
    Ok(JudgeOutcome { correct: false, calls: 2, flagged: true })
}

/// The `k_top` facts closest to `query` by cosine, ties broken by fact id.
pub fn flat_topk_baseline(facts: &[Fact], query: &[f32], k_top: usize) -> Result<Vec<Fact>, EvalError> {
    let mut scored = Vec::with_capacity(facts.len());
    for f in facts {
        let e = f.embedding.as_ref().ok_or_else(|| EvalError::MissingEmbedding(f.fact_id.clone()))?;
        scored.push((cosine(query, e.values()), f));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.fact_id.cmp(&b.1.fact_id)));
    Ok(scored.into_iter().take(k_top).map(|(_, f)| f.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TacitreeSummary,
    TacitreeFacts,
    FlatTopk,
    BruteForce,
    FullContext,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::TacitreeSummary, Strategy::TacitreeFacts, Strategy::FlatTopk, Strategy::BruteForce, Strategy::FullContext];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TacitreeSummary => "tacitree_summary",
            Strategy::TacitreeFacts => "tacitree_facts",
            Strategy::FlatTopk => "flat_topk",
            Strategy::BruteForce => "brute_force",
            Strategy::FullContext => "full_context",
        }
    }

    pub fn needs_tree(self) -> bool {
        matches!(self, Strategy::TacitreeSummary | Strategy::TacitreeFacts)
    }

    /// Parses a comma-separated list, keeping the given order.
    pub fn parse_list(s: &str) -> Result<Vec<Strategy>, EvalError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let st: Strategy = part.parse()?;
            if !out.contains(&st) {
                out.push(st);
            }
        }
        if out.is_empty() {
            return Err(EvalError::EmptyInput("strategy list"));
        }
        Ok(out)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        Strategy::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| EvalError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_top: usize,
    /// Score retrieval over fact ids instead of session ids.
    pub fact_level_f1: bool,
    /// Restrict scoring to tasks of one kind.
    pub only_kind: Option<ReasoningKind>,
    pub retrieval: RetrievalConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k_top: 10, fact_level_f1: false, only_kind: None, retrieval: RetrievalConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub kind: ReasoningKind,
    pub retrieved_session_ids: BTreeSet<String>,
    pub gold_session_ids: BTreeSet<String>,
    pub retrieval_f1: f64,
    pub predicted_answer: String,
    pub correct: bool,
    #[serde(default)]
    pub judge_flagged: bool,
    pub retrieved_tokens: usize,
    /// Relevance-judging calls spent on retrieval.
    pub judge_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitnessStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ImplicitnessStats {
    pub fn from_scores(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let sum: f64 = scores.iter().sum();
        Some(Self {
            count: scores.len(),
            mean: sum / scores.len() as f64,
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub tasks: usize,
    /// Records without a retrieval error; the denominator for every mean.
    pub scored: usize,
    pub mean_f1: f64,
    pub accuracy: f64,
    pub mean_tokens: f64,
    /// `mean_tokens / accuracy`, null when accuracy is zero.
    pub token_to_accuracy: Option<f64>,
    pub mean_judge_calls: f64,
    pub implicitness_stats: Option<ImplicitnessStats>,
}

impl Aggregates {
    /// Recomputes from records in their stored order.
    pub fn compute(records: &[EvalRecord], implicitness: &[f64]) -> Self {
        let scored: Vec<&EvalRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let n = scored.len();
        let mean = |f: &dyn Fn(&EvalRecord) -> f64| if n == 0 { 0.0 } else { scored.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
        let accuracy = mean(&|r| if r.correct { 1.0 } else { 0.0 });
        let mean_tokens = mean(&|r| r.retrieved_tokens as f64);
        Self {
            tasks: records.len(),
            scored: n,
            mean_f1: mean(&|r| r.retrieval_f1),
            accuracy,
            mean_tokens,
            token_to_accuracy: (accuracy > 0.0).then(|| mean_tokens / accuracy),
            mean_judge_calls: mean(&|r| r.judge_calls as f64),
            implicitness_stats: ImplicitnessStats::from_scores(implicitness),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub strategy: Strategy,
    pub config: serde_json::Value,
    pub records: Vec<EvalRecord>,
    /// Per-task implicitness scores, aligned with `records`.
    pub implicitness: Vec<f64>,
    pub aggregates: Aggregates,
}

impl Report {
    pub fn verify(&self) -> Result<(), EvalError> {
        let fresh = Aggregates::compute(&self.records, &self.implicitness);
        if fresh != self.aggregates {
            return Err(EvalError::AggregateMismatch(format!("{} ({})", self.run_id, self.strategy)));
        }
        Ok(())
    }
}

/// One report per strategy, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub run_id: String,
    /// Both sets empty scores 1.0 (vacuous retrieval).
    pub f1_convention: String,
    pub reports: Vec<Report>,
}

const CSV_HEADER: [&str; 13] = [
    "row", "strategy", "task_id", "kind", "retrieval_f1", "correct", "retrieved_tokens", "judge_calls", "retrieved", "gold",
    "accuracy", "token_to_accuracy", "error",
];

impl ReportSet {
    pub fn new(run_id: impl Into<String>, reports: Vec<Report>) -> Self {
        Self { run_id: run_id.into(), f1_convention: "both-empty=1.0".into(), reports }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Parses and checks every report's aggregates against its records.
    pub fn from_json(raw: &str) -> Result<Self, EvalError> {
        let set: ReportSet = serde_json::from_str(raw).map_err(|e| EvalError::Parse(e.to_string()))?;
        for r in &set.reports {
            r.verify()?;
        }
        Ok(set)
    }

    /// One row per task and strategy, then one aggregate row per strategy.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
        for rep in &self.reports {
            for r in &rep.records {
                let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                w.write_record([
                    "task".to_string(),
                    rep.strategy.to_string(),
                    r.task_id.clone(),
                    kind,
                    r.retrieval_f1.to_string(),
                    r.correct.to_string(),
                    r.retrieved_tokens.to_string(),
                    r.judge_calls.to_string(),
                    join(&r.retrieved_session_ids),
                    join(&r.gold_session_ids),
                    String::new(),
                    String::new(),
                    r.error.clone().unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
        }
        for rep in &self.reports {
            let a = &rep.aggregates;
            w.write_record([
                "aggregate".to_string(),
                rep.strategy.to_string(),
                String::new(),
                String::new(),
                a.mean_f1.to_string(),
                String::new(),
                a.mean_tokens.to_string(),
                a.mean_judge_calls.to_string(),
                String::new(),
                String::new(),
                a.accuracy.to_string(),
                a.token_to_accuracy.map(|x| x.to_string()).unwrap_or_else(|| "null".into()),
                String::new(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

/// Everything a strategy may read.
pub struct EvalContext<'a> {
    pub history: &'a ConversationHistory,
    /// Embedded facts of the whole history.
    pub facts: &'a [Fact],
    pub tree: Option<&'a MemoryTree>,
}

struct Retrieved {
    facts: Vec<Fact>,
    sessions: BTreeSet<String>,
    context: String,
    tokens: usize,
    judge_calls: usize,
}

fn session_timestamps(h: &ConversationHistory) -> BTreeMap<String, String> {
    h.sessions.iter().map(|s| (s.session_id.clone(), s.timestamp_string())).collect()
}

fn facts_payload(facts: Vec<Fact>, judge_calls: usize) -> Retrieved {
    let sessions = facts.iter().map(|f| f.source_session_id.clone()).collect();
    let context = facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join("\n");
    let tokens = facts.iter().map(|f| f.token_count).sum();
    Retrieved { facts, sessions, context, tokens, judge_calls }
}

fn run_strategy(gw: &Gateway, ctx: &EvalContext<'_>, question: &str, strategy: Strategy, cfg: &EvalConfig) -> Result<Retrieved, EvalError> {
    match strategy {
        Strategy::TacitreeSummary | Strategy::TacitreeFacts => {
            let tree = ctx.tree.ok_or(EvalError::MissingTree(strategy))?;
            let granularity = if strategy == Strategy::TacitreeSummary { Granularity::Summaries } else { Granularity::Facts };
            let rcfg = RetrievalConfig { answer_granularity: granularity, ..cfg.retrieval.clone() };
            let r = retrieve(gw, tree, question, &rcfg)?;
            let context = r.context();
            let sessions = r.session_ids();
            Ok(Retrieved { sessions, context, tokens: r.retrieved_tokens, judge_calls: r.judge_calls, facts: r.facts })
        }
        Strategy::FlatTopk => {
            let q = gw.embed_one(question)?;
            let mut top = flat_topk_baseline(ctx.facts, q.values(), cfg.k_top)?;
            order_facts(&mut top, &session_timestamps(ctx.history));
            Ok(facts_payload(top, 0))
        }
        Strategy::BruteForce => {
            let r = brute_force_retrieve(gw, ctx.facts, question, &cfg.retrieval)?;
            let mut facts = r.facts;
            order_facts(&mut facts, &session_timestamps(ctx.history));
            Ok(facts_payload(facts, r.judge_calls))
        }
        Strategy::FullContext => {
            let context = ctx.history.sessions.iter().map(|s| s.transcript()).collect::<Vec<_>>().join("\n\n");
            Ok(Retrieved {
                facts: ctx.facts.to_vec(),
                sessions: ctx.history.sessions.iter().map(|s| s.session_id.clone()).collect(),
                context,
                tokens: history_stats(ctx.history, gw.tokenizer()).total_tokens,
                judge_calls: 0,
            })
        }
    }
}

fn evaluate_task(gw: &Gateway, ctx: &EvalContext<'_>, task: &QaTask, strategy: Strategy, cfg: &EvalConfig) -> Result<EvalRecord, EvalError> {
    let gold_sessions: BTreeSet<String> = task.evidence_session_ids.iter().cloned().collect();
    let mut record = EvalRecord {
        task_id: task.task_id.clone(),
        kind: task.kind,
        retrieved_session_ids: BTreeSet::new(),
        gold_session_ids: gold_sessions.clone(),
        retrieval_f1: 0.0,
        predicted_answer: String::new(),
        correct: false,
        judge_flagged: false,
        retrieved_tokens: 0,
        judge_calls: 0,
        error: None,
    };
    let got = match run_strategy(gw, ctx, &task.question, strategy, cfg) {
        Ok(g) => g,
        Err(EvalError::MissingTree(s)) => return Err(EvalError::MissingTree(s)),
        Err(e) => {
            warn!(task_id = %task.task_id, error = %e, "retrieval failed");
            record.error = Some(e.to_string());
            return Ok(record);
        }
    };
    record.retrieval_f1 = if cfg.fact_level_f1 {
        let retrieved: BTreeSet<String> = got.facts.iter().map(|f| f.fact_id.clone()).collect();
        let gold: BTreeSet<String> =
            ctx.facts.iter().filter(|f| gold_sessions.contains(&f.source_session_id)).map(|f| f.fact_id.clone()).collect();
        retrieval_f1(&retrieved, &gold)
    } else {
        retrieval_f1(&got.sessions, &gold_sessions)
    };
    record.retrieved_session_ids = got.sessions;
    record.retrieved_tokens = got.tokens;
    record.judge_calls = got.judge_calls;
    record.predicted_answer = answer(gw, &task.question, &got.context)?;
    let verdict = judge_answer(gw, &task.question, &record.predicted_answer, &task.gold_answer)?;
    record.correct = verdict.correct;
    record.judge_flagged = verdict.flagged;
    Ok(record)
}

/// Text a task's question is compared against for implicitness: the gold
/// answer, or for yes/no tasks the first evidence session.
pub fn implicitness_target(task: &QaTask, history: Option<&ConversationHistory>) -> Option<String> {
    if !task.yes_no {
        return Some(task.gold_answer.clone());
    }
    let first = task.evidence_session_ids.first()?;
    history?.session(first).map(|s| s.plain_text())
}

/// Runs one strategy over every task (concurrently; records ordered by task id).
pub fn run_eval(
    gw: &Gateway,
    ctx: &EvalContext<'_>,
    tasks: &[QaTask],
    strategy: Strategy,
    cfg: &EvalConfig,
    run_id: &str,
) -> Result<Report, EvalError> {
    if strategy.needs_tree() && ctx.tree.is_none() {
        return Err(EvalError::MissingTree(strategy));
    }
    let mut selected: Vec<&QaTask> = tasks.iter().filter(|t| cfg.only_kind.is_none_or(|k| t.kind == k)).collect();
    selected.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let records: Vec<EvalRecord> =
        selected.par_iter().map(|t| evaluate_task(gw, ctx, t, strategy, cfg)).collect::<Result<_, _>>()?;
    let mut implicitness = Vec::new();
    for t in &selected {
        if let Some(target) = implicitness_target(t, Some(ctx.history)) {
            implicitness.push(implicitness_score(gw, &t.question, &target)?);
        }
    }
    let aggregates = Aggregates::compute(&records, &implicitness);
    Ok(Report {
        run_id: run_id.to_string(),
        strategy,
        config: serde_json::to_value(cfg).expect("config serializes"),
        records,
        implicitness,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn f1_worked_examples() {
        assert_eq!(retrieval_f1(&set(&["a", "b", "c", "d"]), &set(&["a", "b"])), 2.0 / 3.0);
        assert_eq!(retrieval_f1(&set(&["a"]), &set(&["a"])), 1.0);
        assert_eq!(retrieval_f1(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(retrieval_f1(&set(&[]), &set(&[])), 1.0);
        assert_eq!(retrieval_f1(&set(&["a"]), &set(&[])), 0.0);
    }

    #[test]
    fn implicitness_bounds() {
        let gw = Gateway::mock(1);
        assert!(implicitness_score(&gw, "gardening tools", "gardening tools").unwrap() <= 1e-6);
        let far = implicitness_score(&gw, "sourdough baking", "kayak river").unwrap();
        assert!((0.0..=2.0).contains(&far));
        assert!(implicitness_score(&gw, "", "x").is_err());
    }

    #[test]
    fn judge_short_circuit_and_verdicts() {
        let gw = Gateway::mock(1);
        let out = judge_answer(&gw, "q", "same", "same").unwrap();
        assert_eq!(out, JudgeOutcome { correct: true, calls: 0, flagged: false });
        assert!(gw.call_log().is_empty());
        assert!(!judge_answer(&gw, "q", "No.", "yes").unwrap().correct);
        assert_eq!(parse_yes_no("YES."), Some(true));
        assert_eq!(parse_yes_no("perhaps"), None);
    }

    fn fact(id: &str, text: &str, gw: &Gateway) -> Fact {
        Fact {
            fact_id: id.into(),
            source_session_id: format!("s-{id}"),
            text: text.into(),
            embedding: Some(gw.embed_one(text).unwrap()),
            token_count: 3,
        }
    }

    #[test]
    fn flat_topk_orders_by_similarity() {
        let gw = Gateway::mock(1);
        let facts = vec![fact("a", "kayak river paddle", &gw), fact("b", "sourdough baking flour", &gw), fact("c", "river rafting trip", &gw)];
        let q = gw.embed_one("sourdough baking flour").unwrap();
        let top = flat_topk_baseline(&facts, q.values(), 10).unwrap();
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].fact_id, "b");
        assert_eq!(flat_topk_baseline(&facts, q.values(), 1).unwrap().len(), 1);
    }

    #[test]
    fn strategy_names() {
        assert_eq!(Strategy::parse_list("tacitree_summary, flat_topk,brute_force").unwrap().len(), 3);
        assert!(Strategy::parse_list("nope").is_err());
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_value(s).unwrap(), s.name());
        }
    }

    #[test]
    fn aggregates_and_tampering() {
        let rec = |f1: f64, correct: bool, tokens: usize| EvalRecord {
            task_id: format!("t{tokens}"),
            kind: ReasoningKind::Opposed,
            retrieved_session_ids: set(&["a"]),
            gold_session_ids: set(&["a"]),
            retrieval_f1: f1,
            predicted_answer: "x".into(),
            correct,
            judge_flagged: false,
            retrieved_tokens: tokens,
            judge_calls: 1,
            error: None,
        };
        let records = vec![rec(1.0, true, 10), rec(0.5, false, 30)];
        let a = Aggregates::compute(&records, &[0.5]);
        assert_eq!(a.mean_f1, 0.75);
        assert_eq!(a.accuracy, 0.5);
        assert_eq!(a.token_to_accuracy, Some(40.0));
        let none = Aggregates::compute(&[rec(0.0, false, 5)], &[]);
        assert_eq!(none.token_to_accuracy, None);

        let report = Report { run_id: "r".into(), strategy: Strategy::FlatTopk, config: serde_json::Value::Null, records, implicitness: vec![0.5], aggregates: a };
        let set = ReportSet::new("r", vec![report]);
        let json = set.to_json();
        assert_eq!(ReportSet::from_json(&json).unwrap(), set);
        let tampered = json.replacen("\"mean_f1\": 0.75", "\"mean_f1\": 0.8", 1);
        assert!(matches!(ReportSet::from_json(&tampered), Err(EvalError::AggregateMismatch(_))));
        let csv = set.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
        assert!(csv.lines().last().unwrap().starts_with("aggregate,flat_topk"));
    }
}
