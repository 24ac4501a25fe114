//! Implicit reasoning scenarios: generation, similarity filtering, selection,
//! verification and distractors.

use tracing::{debug, warn};

use super::{CorpusError, PersonaTrait, ReasoningScenario, ScenarioKind, ScenarioStatus};
use crate::gateway::mock::numbered_items;
use crate::gateway::{prompts, vars, Gateway, Role, Vars};
use crate::text::{content_word_set, edit_similarity, sentences};

pub const DEFAULT_SCENARIO_COUNT: usize = 20;
pub const MIN_USABLE_SCENARIOS: usize = 5;
pub const NEAR_THRESHOLD_BAND: f64 = 0.02;
pub const SELECT_MATCH_THRESHOLD: f64 = 0.9;
pub const DISTRACTOR_ROUNDS: usize = 3;

/// The predicate of a trait with its leading verb removed
/// ("This person enjoys listening to pop music." gives "listening to pop music").
pub fn trait_object(trait_text: &str) -> String {
    crate::gateway::mock::trait_object(trait_text)
}

fn with_variant(mut v: Vars, variant: &str) -> Vars {
    if !variant.is_empty() {
        v.insert("variant".into(), variant.to_string());
    }
    v
}

fn new_scenario(trait_id: &str, kind: ScenarioKind, tag: &str, j: usize, text: String) -> ReasoningScenario {
    ReasoningScenario {
        scenario_id: format!("{trait_id}-{tag}{j:02}"),
        trait_id: trait_id.to_string(),
        kind,
        text,
        similarity_to_trait: None,
        similarity_to_question: None,
        status: ScenarioStatus::Raw,
        near_threshold: false,
        note: None,
    }
}

/// True when `scenario` repeats a content word of the trait predicate.
pub fn violates_banned_words(trait_text: &str, scenario: &str) -> bool {
    let banned = content_word_set(&trait_object(trait_text));
    content_word_set(scenario).iter().any(|w| banned.contains(w))
}

/// Asks for `n` opposed or supportive scenarios and parses the numbered list.
/// Scenarios repeating the trait's content words are dropped.
pub fn generate_scenarios(
    gw: &Gateway,
    t: &PersonaTrait,
    kind: ScenarioKind,
    n: usize,
    variant: &str,
) -> Result<Vec<ReasoningScenario>, CorpusError> {
    let (template, tag) = match kind {
        ScenarioKind::Opposed => (&prompts::OPPOSED_SCENARIOS, "o"),
        ScenarioKind::Supportive => (&prompts::SUPPORTIVE_SCENARIOS, "s"),
        ScenarioKind::Distractor => return Err(CorpusError::InvalidKind("distractor scenarios come from generate_distractors")),
    };
    let v = with_variant(vars([("per_info", t.text.clone()), ("traits_info", trait_object(&t.text))]), variant);
    let reply = gw.chat(Role::Generator, template, &v)?;
    let mut out = Vec::new();
    for item in numbered_items(&reply.text).into_iter().take(n) {
        let Some(first) = sentences(&item).into_iter().next() else { continue };
        if violates_banned_words(&t.text, &first) {
            debug!(trait_id = %t.trait_id, scenario = %first, "dropped scenario repeating trait words");
            continue;
        }
        out.push(new_scenario(&t.trait_id, kind, tag, out.len(), first));
    }
    if out.len() < MIN_USABLE_SCENARIOS {
        return Err(CorpusError::TooFewScenarios { trait_id: t.trait_id.clone(), usable: out.len() });
    }
    Ok(out)
}

/// Records trait similarity on every raw scenario; those below `beta` become
/// `Filtered`, the rest `Rejected`. Scenarios within the review band of
/// `beta` are flagged either way.
pub fn filter_by_similarity(
    gw: &Gateway,
    mut scenarios: Vec<ReasoningScenario>,
    t: &PersonaTrait,
    beta: f64,
) -> Result<Vec<ReasoningScenario>, CorpusError> {
    if scenarios.is_empty() {
        return Ok(scenarios);
    }
    let mut texts = vec![t.text.clone()];
    texts.extend(scenarios.iter().map(|s| s.text.clone()));
    let emb = gw.embed(&texts)?;
    for (s, e) in scenarios.iter_mut().zip(&emb[1..]) {
        if s.status != ScenarioStatus::Raw {
            continue;
        }
        let sim = emb[0].cosine(e);
        s.similarity_to_trait = Some(sim);
        s.near_threshold = (sim - beta).abs() <= NEAR_THRESHOLD_BAND;
        if sim < beta {
            s.status = ScenarioStatus::Filtered;
        } else {
            s.status = ScenarioStatus::Rejected;
            s.note = Some(format!("trait similarity {sim:.4} >= {beta}"));
        }
    }
    Ok(scenarios)
}

/// Index of the selected scenario and whether the automatic fallback was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub fallback: bool,
}

/// Matches a free-text selection reply against the candidates.
pub fn match_selection(reply: &str, candidates: &[&str]) -> Option<usize> {
    let cleaned: String = {
        let r = reply.trim().trim_matches(['"', '\'']);
        let digits = r.chars().take_while(|c| c.is_ascii_digit()).count();
        match r[digits..].strip_prefix([':', '.', ')']) {
            Some(rest) if digits > 0 => rest.trim().to_string(),
            _ => r.to_string(),
        }
    };
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (edit_similarity(&cleaned, c), i))
        .filter(|(s, _)| *s >= SELECT_MATCH_THRESHOLD)
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, i)| i)
}

/// Picks the best filtered opposed scenario and marks it `Selected`.
/// Unmatched replies fall back to the lowest trait similarity.
pub fn select_opposed_best(
    gw: &Gateway,
    t: &PersonaTrait,
    scenarios: &mut [ReasoningScenario],
    variant: &str,
) -> Result<Selection, CorpusError> {
    let pool: Vec<usize> = scenarios
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == ScenarioKind::Opposed && s.status == ScenarioStatus::Filtered)
        .map(|(i, _)| i)
        .collect();
    if pool.is_empty() {
        return Err(CorpusError::NoCandidates(t.trait_id.clone()));
    }
    let listing: Vec<String> = pool.iter().enumerate().map(|(j, &i)| format!("{}: {}", j + 1, scenarios[i].text)).collect();
    let v = with_variant(vars([("per_info", t.text.clone()), ("str_reason", listing.join("\n"))]), variant);
    let reply = gw.chat(Role::Generator, &prompts::OPPOSED_SELECT, &v)?;
    let texts: Vec<&str> = pool.iter().map(|&i| scenarios[i].text.as_str()).collect();
    let selection = match match_selection(&reply.text, &texts) {
        Some(j) => Selection { index: pool[j], fallback: false },
        None => {
            warn!(trait_id = %t.trait_id, "selection reply matched no candidate; using lowest similarity");
            let index = pool
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let sa = scenarios[a].similarity_to_trait.unwrap_or(f64::INFINITY);
                    let sb = scenarios[b].similarity_to_trait.unwrap_or(f64::INFINITY);
                    sa.total_cmp(&sb).then(a.cmp(&b))
                })
                .expect("pool is non-empty");
            Selection { index, fallback: true }
        }
    };
    scenarios[selection.index].status = ScenarioStatus::Selected;
    if selection.fallback {
        scenarios[selection.index].note = Some("selected by lowest-similarity fallback".into());
    }
    Ok(selection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
    Uncertain,
}

pub fn parse_verdict(reply: &str) -> Verdict {
    let first = reply.trim().split(|c: char| !c.is_alphabetic()).find(|w| !w.is_empty()).unwrap_or("");
    match first.to_lowercase().as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Uncertain,
    }
}

/// Verifies every filtered supportive scenario; returns how many became
/// `Verified`. The rest are `Rejected` with the verdict in `note`.
pub fn verify_supportive(gw: &Gateway, t: &PersonaTrait, scenarios: &mut [ReasoningScenario]) -> Result<usize, CorpusError> {
    let mut verified = 0;
    for s in scenarios
        .iter_mut()
        .filter(|s| s.kind == ScenarioKind::Supportive && s.status == ScenarioStatus::Filtered)
    {
        let v = vars([("per_info", t.text.clone()), ("scenario", s.text.clone())]);
        let reply = gw.chat(Role::Generator, &prompts::SUPPORTIVE_VERIFY, &v)?;
        match parse_verdict(&reply.text) {
            Verdict::Yes => {
                s.status = ScenarioStatus::Verified;
                verified += 1;
            }
            other => {
                s.status = ScenarioStatus::Rejected;
                s.note = Some(format!("verification: {other:?}").to_lowercase());
            }
        }
    }
    Ok(verified)
}

/// Distractors that beat the selected scenario's similarity to the question.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSet {
    pub scenarios: Vec<ReasoningScenario>,
    pub shortfall: bool,
    pub r_star_similarity: f64,
}

/// Generates up to `n` distractors over at most [`DISTRACTOR_ROUNDS`] rounds,
/// keeping only candidates closer to the question than `r_star`.
pub fn generate_distractors(
    gw: &Gateway,
    t: &PersonaTrait,
    question: &str,
    r_star: &str,
    n: usize,
    variant: &str,
) -> Result<DistractorSet, CorpusError> {
    let base = gw.embed(&[question.to_string(), r_star.to_string()])?;
    let r_star_similarity = base[0].cosine(&base[1]);
    let mut kept: Vec<ReasoningScenario> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for round in 0..DISTRACTOR_ROUNDS {
        if kept.len() >= n {
            break;
        }
        let v = vars([
            ("persona", t.text.clone()),
            ("question", question.to_string()),
            ("traits_info", trait_object(&t.text)),
        ]);
        let v = with_variant(v, &format!("{variant}/{round}"));
        let reply = gw.chat(Role::Generator, &prompts::DISTRACTOR_SCENARIOS, &v)?;
        let fresh: Vec<String> = numbered_items(&reply.text)
            .into_iter()
            .filter_map(|i| sentences(&i).into_iter().next())
            .filter(|s| !seen.contains(s))
            .collect();
        if fresh.is_empty() {
            continue;
        }
        seen.extend(fresh.iter().cloned());
        let emb = gw.embed(&fresh)?;
        for (text, e) in fresh.into_iter().zip(&emb) {
            let sim = base[0].cosine(e);
            if sim > r_star_similarity && kept.len() < n {
                let mut s = new_scenario(&t.trait_id, ScenarioKind::Distractor, "d", kept.len(), text);
                s.similarity_to_question = Some(sim);
                s.status = ScenarioStatus::Filtered;
                kept.push(s);
            }
        }
    }
    Ok(DistractorSet { shortfall: kept.len() < n, scenarios: kept, r_star_similarity })
}
