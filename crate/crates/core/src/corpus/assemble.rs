//! Per-trait pipelines and history assembly.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::pool::PoolSource;
use super::qa::{first_person, make_opposed_qa, make_supportive_qa, split_trait};
use super::scenarios::{filter_by_similarity, generate_distractors, generate_scenarios, select_opposed_best, trait_object, verify_supportive};
use super::session::{expand_to_session, VALIDATION_WARNING_TAG};
use super::{
    persona, serialize_tasks, CorpusError, PersonaTrait, QaTask, ReasoningScenario, ReviewItem, ReviewReason, ScenarioKind,
    ScenarioStatus, TraitCategory,
};
use crate::cluster::mix_seed;
use crate::gateway::Gateway;
use crate::model::{serialize_history_with_config, ConversationHistory, EmbeddingVector, Session};
use crate::text::{content_word_set, sentences, verb_base_form, words};

pub const TAG_TRAIT: &str = "trait";
pub const TAG_EVIDENCE: &str = "evidence";
pub const TAG_NOISE: &str = "noise";
pub const MAX_ORDERING_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KindSelection {
    Opposed,
    Supportive,
    #[default]
    Both,
}

impl KindSelection {
    fn opposed(self) -> bool {
        matches!(self, Self::Opposed | Self::Both)
    }

    fn supportive(self) -> bool {
        matches!(self, Self::Supportive | Self::Both)
    }
}

impl FromStr for KindSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "opposed" => Ok(Self::Opposed),
            "supportive" => Ok(Self::Supportive),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown kind {other:?}; expected opposed, supportive or both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub traits_per_example: usize,
    pub kind: KindSelection,
    pub scenarios_per_trait: usize,
    pub distractors: usize,
    /// Pool sessions per source and task.
    pub pool_per_source: usize,
    pub target_sessions: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    /// Verified supportive scenarios expanded into sessions, per trait.
    pub max_supportive_sessions: usize,
    pub beta: f64,
    pub seed: u64,
    pub window_days: usize,
    pub start_date: NaiveDate,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            traits_per_example: 7,
            kind: KindSelection::Both,
            scenarios_per_trait: 20,
            distractors: 5,
            pool_per_source: 5,
            target_sessions: 100,
            min_sessions: 80,
            max_sessions: 120,
            max_supportive_sessions: 5,
            beta: 0.4,
            seed: 0,
            window_days: 365,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
        }
    }
}

impl ExampleConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if self.traits_per_example == 0 {
            return bad("traits_per_example must be at least 1");
        }
        if !(self.min_sessions <= self.target_sessions && self.target_sessions <= self.max_sessions) {
            return bad("need min_sessions <= target_sessions <= max_sessions");
        }
        if self.max_sessions > self.window_days {
            return bad("max_sessions exceeds the number of distinct days in the window");
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [-1, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub history: ConversationHistory,
    pub tasks: Vec<QaTask>,
    pub traits: Vec<PersonaTrait>,
    pub scenarios: Vec<ReasoningScenario>,
    pub review: Vec<ReviewItem>,
}

struct TaskPlan {
    task: QaTask,
    /// Noise must be strictly closer to the question than this.
    threshold: f64,
    question: EmbeddingVector,
    /// Pool sessions restating this predicate are excluded (supportive only).
    restated: Option<Predicate>,
}

/// A trait predicate: the verb in base form and the content words of its object.
#[derive(Debug, Clone, PartialEq)]
struct Predicate {
    verb: String,
    object: BTreeSet<String>,
}

impl Predicate {
    fn of(trait_text: &str) -> Self {
        let (verb, _) = split_trait(trait_text);
        Self { verb: verb_base_form(&verb), object: content_word_set(&trait_object(trait_text)) }
    }

    fn has_verb(&self, words: &[String]) -> bool {
        const BE: &[&str] = &["be", "am", "are", "is", "was", "were", "been"];
        words.iter().any(|w| if self.verb == "be" { BE.contains(&w.as_str()) } else { verb_base_form(w) == self.verb })
    }

    /// One sentence must carry the verb and at least half of the object words.
    fn restated_by(&self, session: &Session) -> bool {
        if self.object.is_empty() {
            return false;
        }
        session.turns.iter().flat_map(|u| sentences(&u.text)).any(|s| {
            let ws = words(&s);
            let hits = self.object.iter().filter(|o| ws.contains(*o)).count();
            hits * 2 >= self.object.len() && self.has_verb(&ws)
        })
    }
}

struct TraitBundle {
    p_session_id: String,
    sessions: Vec<Session>,
    plans: Vec<TaskPlan>,
    scenarios: Vec<ReasoningScenario>,
    review: Vec<ReviewItem>,
}

fn review(reason: ReviewReason, trait_id: &str, s: Option<&ReasoningScenario>, detail: impl Into<String>) -> ReviewItem {
    ReviewItem {
        reason,
        trait_id: trait_id.to_string(),
        scenario_id: s.map(|s| s.scenario_id.clone()),
        similarity: s.and_then(|s| s.similarity_to_trait),
        detail: detail.into(),
    }
}

fn placeholder_time(cfg: &ExampleConfig) -> NaiveDateTime {
    cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight exists")
}

fn session_similarities(gw: &Gateway, q: &EmbeddingVector, sessions: &[&Session]) -> Result<Vec<f64>, CorpusError> {
    if sessions.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = sessions.iter().map(|s| s.plain_text()).collect();
    Ok(gw.embed(&texts)?.iter().map(|e| q.cosine(e)).collect())
}

fn flag_near_threshold(scenarios: &[ReasoningScenario], trait_id: &str, review_out: &mut Vec<ReviewItem>) {
    for s in scenarios.iter().filter(|s| s.near_threshold) {
        review_out.push(review(ReviewReason::NearThreshold, trait_id, Some(s), format!("{:?}", s.status).to_lowercase()));
    }
}

fn run_trait(gw: &Gateway, t: &PersonaTrait, i: usize, history_id: &str, cfg: &ExampleConfig) -> Result<TraitBundle, CorpusError> {
    let variant = format!("{}-{history_id}", cfg.seed);
    let base = placeholder_time(cfg);
    let mut out = TraitBundle {
        p_session_id: format!("t{i}-p"),
        sessions: Vec::new(),
        plans: Vec::new(),
        scenarios: Vec::new(),
        review: Vec::new(),
    };
    let p = expand_to_session(gw, &first_person(&t.text), &out.p_session_id, base, vec![TAG_TRAIT.into()], &variant)?;
    out.sessions.push(p);

    if cfg.kind.opposed() {
        let raw = generate_scenarios(gw, t, ScenarioKind::Opposed, cfg.scenarios_per_trait, &variant)?;
        let mut scen = filter_by_similarity(gw, raw, t, cfg.beta)?;
        flag_near_threshold(&scen, &t.trait_id, &mut out.review);
        let sel = select_opposed_best(gw, t, &mut scen, &variant)?;
        if sel.fallback {
            out.review.push(review(ReviewReason::SelectionFallback, &t.trait_id, Some(&scen[sel.index]), "no candidate matched the selection reply"));
        }
        let r_star = scen[sel.index].text.clone();
        let mut task = make_opposed_qa(gw, t, &r_star, &format!("{history_id}-t{i}-opposed"), &variant)?;
        let q = gw.embed_one(&task.question)?;
        let r_id = format!("t{i}-rstar");
        let r_session = expand_to_session(gw, &r_star, &r_id, base, vec![TAG_EVIDENCE.into()], &variant)?;
        let threshold = session_similarities(gw, &q, &[&r_session])?[0];
        scen[sel.index].similarity_to_question = Some(gw.embed_one(&r_star)?.cosine(&q));

        let distractors = generate_distractors(gw, t, &task.question, &r_star, cfg.distractors, &variant)?;
        let mut d_sessions = Vec::new();
        for (j, d) in distractors.scenarios.iter().enumerate() {
            d_sessions.push(expand_to_session(gw, &d.text, &format!("t{i}-d{j}"), base, vec![TAG_NOISE.into()], &variant)?);
        }
        let sims = session_similarities(gw, &q, &d_sessions.iter().collect::<Vec<_>>())?;
        let mut dropped = 0;
        let mut d_scen = distractors.scenarios;
        for ((s, sim), d) in d_sessions.into_iter().zip(sims).zip(d_scen.iter_mut()) {
            if sim > threshold {
                task.noise_session_ids.push(s.session_id.clone());
                out.sessions.push(s);
            } else {
                dropped += 1;
                d.status = ScenarioStatus::Rejected;
                d.note = Some(format!("session similarity {sim:.4} <= evidence session {threshold:.4}"));
            }
        }
        if distractors.shortfall || dropped > 0 {
            out.review.push(review(
                ReviewReason::DistractorShortfall,
                &t.trait_id,
                None,
                format!("{} of {} distractor sessions kept", task.noise_session_ids.len(), cfg.distractors),
            ));
        }
        task.evidence_session_ids = vec![r_id];
        task.trait_session_id = Some(out.p_session_id.clone());
        out.sessions.push(r_session);
        out.scenarios.extend(scen);
        out.scenarios.extend(d_scen);
        out.plans.push(TaskPlan { task, threshold, question: q, restated: None });
    }

    if cfg.kind.supportive() {
        let raw = generate_scenarios(gw, t, ScenarioKind::Supportive, cfg.scenarios_per_trait, &variant)?;
        let mut scen = filter_by_similarity(gw, raw, t, cfg.beta)?;
        flag_near_threshold(&scen, &t.trait_id, &mut out.review);
        let verified = verify_supportive(gw, t, &mut scen)?;
        for s in scen.iter().filter(|s| s.status == ScenarioStatus::Rejected && s.note.as_deref().is_some_and(|n| n.starts_with("verification"))) {
            out.review.push(review(ReviewReason::VerificationRejected, &t.trait_id, Some(s), s.note.clone().unwrap_or_default()));
        }
        let mut task = make_supportive_qa(t, verified, &format!("{history_id}-t{i}-supportive"));
        let q = gw.embed_one(&task.question)?;
        let mut v_sessions = Vec::new();
        for s in scen.iter_mut().filter(|s| s.status == ScenarioStatus::Verified) {
            if v_sessions.len() == cfg.max_supportive_sessions {
                s.note = Some("verified; not expanded (session cap)".into());
                continue;
            }
            let id = format!("t{i}-v{}", v_sessions.len());
            v_sessions.push(expand_to_session(gw, &s.text, &id, base, vec![TAG_EVIDENCE.into()], &variant)?);
        }
        // The first verified session plays the role of the single evidence
        // session; without one the trait session stands in.
        let anchor = v_sessions.first().unwrap_or(&out.sessions[0]);
        let threshold = session_similarities(gw, &q, &[anchor])?[0];
        task.evidence_session_ids = v_sessions.iter().map(|s| s.session_id.clone()).collect();
        task.trait_session_id = Some(out.p_session_id.clone());
        out.sessions.extend(v_sessions);
        out.scenarios.extend(scen);
        out.plans.push(TaskPlan { task, threshold, question: q, restated: Some(Predicate::of(&t.text)) });
    }

    for s in out.sessions.iter().filter(|s| s.has_tag(VALIDATION_WARNING_TAG)) {
        out.review.push(review(ReviewReason::ValidationWarning, &t.trait_id, None, s.session_id.clone()));
    }
    Ok(out)
}

fn pick_traits(gw: &Gateway, personas: &[String], cfg: &ExampleConfig, example_idx: usize) -> Result<Vec<PersonaTrait>, CorpusError> {
    if personas.is_empty() {
        return Err(CorpusError::EmptyInput("persona list"));
    }
    let count = cfg.traits_per_example.min(personas.len());
    let start = example_idx * cfg.traits_per_example;
    let picks: Vec<usize> = (0..count).map(|j| (start + j) % personas.len()).collect();
    let standardized: Vec<Result<Vec<PersonaTrait>, CorpusError>> =
        picks.par_iter().map(|&p| persona::standardize_persona(gw, &personas[p], p)).collect();
    let mut out = Vec::new();
    for traits in standardized {
        let traits = traits?;
        let best = traits.iter().find(|t| t.category == TraitCategory::Everyday).or_else(|| traits.first());
        if let Some(t) = best {
            out.push(t.clone());
        }
    }
    Ok(out)
}

/// Runs every trait pipeline (concurrently) and assembles one history.
pub fn generate_example(
    gw: &Gateway,
    personas: &[String],
    pool: &[PoolSource],
    cfg: &ExampleConfig,
    example_idx: usize,
) -> Result<Example, CorpusError> {
    cfg.validate()?;
    let history_id = format!("example_{example_idx:03}");
    let traits = pick_traits(gw, personas, cfg, example_idx)?;
    let results: Vec<Result<TraitBundle, CorpusError>> =
        traits.par_iter().enumerate().map(|(i, t)| run_trait(gw, t, i, &history_id, cfg)).collect();

    let mut bundles = Vec::new();
    let mut review_items = Vec::new();
    let mut first_err = None;
    for (t, r) in traits.iter().zip(results) {
        match r {
            Ok(b) => bundles.push(b),
            Err(e) => {
                warn!(trait_id = %t.trait_id, error = %e, "trait pipeline failed");
                review_items.push(review(ReviewReason::TraitSkipped, &t.trait_id, None, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if bundles.is_empty() {
        return Err(first_err.unwrap_or(CorpusError::EmptyInput("trait list")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, example_idx as u64 + 1));
    let mut sessions: Vec<Session> = bundles.iter().flat_map(|b| b.sessions.iter().cloned()).collect();
    if sessions.len() > cfg.max_sessions {
        return Err(CorpusError::ConstraintUnsatisfiable(format!(
            "{} mandatory sessions exceed the maximum of {}",
            sessions.len(),
            cfg.max_sessions
        )));
    }

    // Noise candidates per task and source, shuffled.
    let pool_vecs: Vec<Vec<EmbeddingVector>> = pool
        .iter()
        .map(|src| gw.embed(&src.sessions.iter().map(Session::plain_text).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    let plans: Vec<(usize, usize)> =
        bundles.iter().enumerate().flat_map(|(b, bundle)| (0..bundle.plans.len()).map(move |p| (b, p))).collect();
    let mut candidates: Vec<Vec<Vec<usize>>> = Vec::with_capacity(plans.len());
    for &(b, p) in &plans {
        let plan = &bundles[b].plans[p];
        let per_src = pool
            .iter()
            .zip(&pool_vecs)
            .map(|(src, vecs)| {
                let mut c: Vec<usize> = (0..src.sessions.len())
                    .filter(|&j| plan.question.cosine(&vecs[j]) > plan.threshold)
                    .filter(|&j| !plan.restated.as_ref().is_some_and(|p| p.restated_by(&src.sessions[j])))
                    .collect();
                c.shuffle(&mut rng);
                c
            })
            .collect::<Vec<Vec<usize>>>();
        debug!(task = %plan.task.task_id, question = %plan.task.question, threshold = plan.threshold, candidates = ?per_src.iter().map(Vec::len).collect::<Vec<_>>(), "noise candidates");
        candidates.push(per_src);
    }

    let mut used: Vec<Vec<bool>> = pool.iter().map(|s| vec![false; s.sessions.len()]).collect();
    let mut counts = vec![vec![0usize; pool.len()]; plans.len()];
    let mut rotor = vec![0usize; plans.len()];
    let mut injected: Vec<Vec<String>> = vec![Vec::new(); plans.len()];
    let mut progress = true;
    while sessions.len() < cfg.target_sessions && progress && !pool.is_empty() {
        progress = false;
        for pi in 0..plans.len() {
            if sessions.len() >= cfg.target_sessions {
                break;
            }
            for step in 0..pool.len() {
                let src = (rotor[pi] + step) % pool.len();
                if counts[pi][src] >= cfg.pool_per_source {
                    continue;
                }
                let Some(pos) = candidates[pi][src].iter().position(|&j| !used[src][j]) else { continue };
                let j = candidates[pi][src].remove(pos);
                used[src][j] = true;
                counts[pi][src] += 1;
                rotor[pi] = src + 1;
                let original = &pool[src].sessions[j];
                let id = format!("pool-{}-{}", pool[src].name, original.session_id);
                sessions.push(Session { session_id: id.clone(), timestamp: original.timestamp, tags: vec![TAG_NOISE.into()], turns: original.turns.clone() });
                injected[pi].push(id);
                progress = true;
                break;
            }
        }
    }
    if sessions.len() < cfg.min_sessions {
        return Err(CorpusError::PoolTooSmall { needed: cfg.min_sessions, available: sessions.len() });
    }

    let constraints: Vec<(String, Vec<String>)> = bundles
        .iter()
        .map(|b| (b.p_session_id.clone(), b.plans.iter().flat_map(|p| p.task.evidence_session_ids.iter().cloned()).collect()))
        .collect();
    let mut ordered = false;
    for attempt in 0..MAX_ORDERING_ATTEMPTS {
        sessions.shuffle(&mut rng);
        let pos = |id: &str| sessions.iter().position(|s| s.session_id == id);
        let ok = constraints.iter().all(|(p, evidence)| {
            let pi = pos(p).expect("trait session present");
            evidence.iter().all(|e| pos(e) != Some(pi + 1))
        });
        if ok {
            ordered = true;
            break;
        }
        info!(attempt, "evidence followed its trait session; reshuffling");
    }
    if !ordered {
        return Err(CorpusError::ConstraintUnsatisfiable("evidence session kept following its trait session".into()));
    }

    let mut days = index::sample(&mut rng, cfg.window_days, sessions.len()).into_vec();
    days.sort_unstable();
    let start = placeholder_time(cfg);
    for (s, d) in sessions.iter_mut().zip(days) {
        let secs = rng.gen_range(8 * 3600..22 * 3600);
        s.timestamp = start + Duration::days(d as i64) + Duration::seconds(secs);
    }

    let persona_refs = traits.iter().map(|t| t.trait_id.clone()).collect();
    let history = ConversationHistory::new(history_id, persona_refs, sessions)?;

    let mut tasks = Vec::new();
    let mut scenarios = Vec::new();
    let mut pi = 0;
    for b in bundles {
        for plan in b.plans {
            let mut task = plan.task;
            task.noise_session_ids.append(&mut injected[pi]);
            tasks.push(task);
            pi += 1;
        }
        scenarios.extend(b.scenarios);
        review_items.extend(b.review);
    }
    Ok(Example { history, tasks, traits, scenarios, review: review_items })
}

/// Writes `history.jsonl`, `tasks.jsonl`, `scenarios.json` and
/// `review_queue.json` into `dir`.
pub fn write_example(dir: &Path, ex: &Example, config: Option<serde_json::Value>) -> Result<(), CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("history.jsonl"), serialize_history_with_config(&ex.history, config)).map_err(io)?;
    std::fs::write(dir.join("tasks.jsonl"), serialize_tasks(&ex.tasks)).map_err(io)?;
    std::fs::write(dir.join("scenarios.json"), pretty_json(&ex.scenarios)).map_err(io)?;
    std::fs::write(dir.join("review_queue.json"), pretty_json(&ex.review)).map_err(io)?;
    Ok(())
}

fn pretty_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pool::{synthetic_pool, SAMPLE_PERSONAS};
    use crate::corpus::ReasoningKind;

    fn personas() -> Vec<String> {
        SAMPLE_PERSONAS.iter().map(|s| s.to_string()).collect()
    }

    fn chat(lines: &[&str]) -> Session {
        let ts = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
        let turns = lines.iter().map(|l| crate::model::Utterance::user(*l)).collect();
        Session { session_id: "x".into(), timestamp: ts, tags: vec![], turns }
    }

    #[test]
    fn predicate_needs_verb_and_object_in_one_sentence() {
        let p = Predicate::of("This person enjoys gardening every weekend.");
        assert_eq!(p.verb, "enjoy");
        assert!(p.restated_by(&chat(&["We enjoy gardening."])));
        assert!(p.restated_by(&chat(&["She enjoys weekend gardening."])));
        assert!(!p.restated_by(&chat(&["My neighbour wants to try gardening."])));
        assert!(!p.restated_by(&chat(&["I enjoy films. Gardening is hard."])));
        let be = Predicate::of("This person is vegetarian.");
        assert!(be.restated_by(&chat(&["I am vegetarian now."])));
        assert!(!be.restated_by(&chat(&["Vegetarian recipes, please."])));
    }

    #[test]
    fn opposed_example_satisfies_constraints() {
        let gw = Gateway::mock(4);
        let pool = synthetic_pool(2, 60, 3);
        let cfg = ExampleConfig { kind: KindSelection::Opposed, ..ExampleConfig::default() };
        let ex = generate_example(&gw, &personas(), &pool, &cfg, 0).unwrap();
        let n = ex.history.sessions.len();
        assert!((80..=120).contains(&n), "{n} sessions");
        assert_eq!(ex.tasks.len(), 7);
        for task in &ex.tasks {
            assert_eq!(task.kind, ReasoningKind::Opposed);
            let p = ex.history.session_index(task.trait_session_id.as_deref().unwrap()).unwrap();
            let r = ex.history.session_index(&task.evidence_session_ids[0]).unwrap();
            assert_ne!(r, p + 1);
            let q = gw.embed_one(&task.question).unwrap();
            let sim = |id: &str| q.cosine(&gw.embed_one(&ex.history.session(id).unwrap().plain_text()).unwrap());
            let r_sim = sim(&task.evidence_session_ids[0]);
            for id in &task.noise_session_ids {
                assert!(sim(id) > r_sim, "{id}");
            }
        }
        for w in ex.history.sessions.windows(2) {
            assert!(w[0].timestamp.date() < w[1].timestamp.date());
        }
        for s in &ex.scenarios {
            if matches!(s.status, ScenarioStatus::Filtered | ScenarioStatus::Selected | ScenarioStatus::Verified) && s.kind != ScenarioKind::Distractor {
                assert!(s.similarity_to_trait.unwrap() < 0.4);
            }
        }
    }

    #[test]
    fn deterministic_and_supportive_kind() {
        let gw = Gateway::mock(4);
        let pool = synthetic_pool(2, 60, 3);
        let cfg = ExampleConfig { kind: KindSelection::Supportive, seed: 9, ..ExampleConfig::default() };
        let a = generate_example(&gw, &personas(), &pool, &cfg, 1).unwrap();
        let b = generate_example(&gw, &personas(), &pool, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.tasks.iter().all(|t| t.yes_no));
        for t in &a.tasks {
            for e in &t.evidence_session_ids {
                assert!(a.history.session(e).unwrap().has_tag(TAG_EVIDENCE));
            }
        }
    }

    #[test]
    fn pool_too_small() {
        let gw = Gateway::mock(4);
        let cfg = ExampleConfig { kind: KindSelection::Opposed, ..ExampleConfig::default() };
        let err = generate_example(&gw, &personas(), &[], &cfg, 0).unwrap_err();
        assert!(matches!(err, CorpusError::PoolTooSmall { .. }), "{err}");
    }
}
