//! Session to fact extraction and near-duplicate suppression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::gateway::{prompts, vars, Gateway, GatewayError, Role};
use crate::model::{cosine, ConversationHistory, Fact, Session};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no facts could be extracted from session {0}")]
    ExtractionEmpty(String),
    #[error("fact {0} has no embedding")]
    MissingEmbedding(String),
    #[error("duplicate threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub session_id: String,
    pub facts: Vec<Fact>,
    pub dropped_duplicates: usize,
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim();
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')', ':']) {
            return rest.trim();
        }
    }
    line
}

/// One fact per non-empty line, list markers removed.
pub fn parse_fact_lines(output: &str) -> Vec<String> {
    output
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty() && !l.eq_ignore_ascii_case("none"))
        .map(str::to_string)
        .collect()
}

/// Extracts facts from one session. Facts are returned unembedded, in the
/// order the model listed them.
pub fn extract_facts(gw: &Gateway, session: &Session, include_assistant: bool) -> Result<ExtractionResult, ExtractError> {
    let speakers = if include_assistant { "user and assistant" } else { "user" };
    let v = vars([("transcript", session.transcript()), ("speakers", speakers.into())]);
    let mut lines = Vec::new();
    for attempt in 0..2 {
        let reply = gw.chat(Role::Framework, &prompts::FACT_EXTRACT, &v)?;
        lines = parse_fact_lines(&reply.text);
        if !lines.is_empty() {
            break;
        }
        debug!(session = %session.session_id, attempt, "empty extraction");
    }
    if lines.is_empty() {
        return Err(ExtractError::ExtractionEmpty(session.session_id.clone()));
    }
    let facts = lines
        .into_iter()
        .enumerate()
        .map(|(i, text)| Fact {
            fact_id: format!("{}#{i:03}", session.session_id),
            source_session_id: session.session_id.clone(),
            token_count: gw.count_tokens(&text),
            text,
            embedding: None,
        })
        .collect();
    Ok(ExtractionResult { session_id: session.session_id.clone(), facts, dropped_duplicates: 0 })
}

/// Greedy first-wins deduplication: a fact is dropped iff its cosine
/// similarity to an already kept fact is at least `tau`.
pub fn dedupe_facts(facts: Vec<Fact>, tau: f64) -> Result<(Vec<Fact>, usize), ExtractError> {
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(ExtractError::InvalidThreshold(tau));
    }
    if let Some(f) = facts.iter().find(|f| f.embedding.is_none()) {
        return Err(ExtractError::MissingEmbedding(f.fact_id.clone()));
    }
    let mut kept: Vec<Fact> = Vec::with_capacity(facts.len());
    let mut dropped = 0;
    for fact in facts {
        let e = fact.embedding.as_ref().expect("checked above").values();
        let duplicate = kept.iter().any(|k| cosine(k.embedding.as_ref().expect("checked above").values(), e) >= tau);
        if duplicate {
            dropped += 1;
        } else {
            kept.push(fact);
        }
    }
    Ok((kept, dropped))
}

/// Attaches embeddings to every fact lacking one.
pub fn embed_facts(gw: &Gateway, facts: &mut [Fact]) -> Result<(), GatewayError> {
    const BATCH: usize = 64;
    let pending: Vec<usize> = (0..facts.len()).filter(|&i| facts[i].embedding.is_none()).collect();
    for chunk in pending.chunks(BATCH) {
        let texts: Vec<String> = chunk.iter().map(|&i| facts[i].text.clone()).collect();
        for (&i, v) in chunk.iter().zip(gw.embed(&texts)?) {
            facts[i].embedding = Some(v);
        }
    }
    Ok(())
}

/// Extract, embed and deduplicate over a whole history. Sessions yielding no
/// facts are skipped with a warning.
pub fn extract_history(
    gw: &Gateway,
    history: &ConversationHistory,
    include_assistant: bool,
    tau: f64,
) -> Result<(Vec<Fact>, usize), ExtractError> {
    let results: Vec<Result<ExtractionResult, ExtractError>> = history
        .sessions
        .par_iter()
        .map(|s| extract_facts(gw, s, include_assistant))
        .collect();
    let mut facts = Vec::new();
    for r in results {
        match r {
            Ok(r) => facts.extend(r.facts),
            Err(ExtractError::ExtractionEmpty(id)) => warn!(session = %id, "session yielded no facts"),
            Err(e) => return Err(e),
        }
    }
    embed_facts(gw, &mut facts)?;
    dedupe_facts(facts, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingVector, Utterance};

    fn session(turns: Vec<Utterance>) -> Session {
        Session {
            session_id: "s1".into(),
            timestamp: chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            tags: vec![],
            turns,
        }
    }

    fn fact(id: &str, v: Vec<f32>) -> Fact {
        Fact {
            fact_id: id.into(),
            source_session_id: "s1".into(),
            text: id.into(),
            embedding: Some(EmbeddingVector::normalized(v).unwrap()),
            token_count: 1,
        }
    }

    #[test]
    fn user_sentences_become_facts() {
        let gw = Gateway::mock(2);
        let s = session(vec![Utterance::user("I broke my leg. I love hiking."), Utterance::assistant("Oh no.")]);
        let r = extract_facts(&gw, &s, false).unwrap();
        let texts: Vec<_> = r.facts.iter().map(|f| f.text.as_str()).collect();
        assert_eq!(texts, ["I broke my leg.", "I love hiking."]);
        assert!(r.facts.iter().all(|f| f.source_session_id == "s1"));
    }

    #[test]
    fn assistant_only_is_empty() {
        let gw = Gateway::mock(2);
        // first-turn rule is a parse-time check; build the value directly
        let s = session(vec![Utterance::assistant("Hello there. How are you?")]);
        assert!(matches!(extract_facts(&gw, &s, false), Err(ExtractError::ExtractionEmpty(_))));
        assert_eq!(extract_facts(&gw, &s, true).unwrap().facts.len(), 2);
    }

    #[test]
    fn markers_are_stripped() {
        assert_eq!(parse_fact_lines("1. a\n- b\n\n* c\nNONE"), ["a", "b", "c"]);
    }

    #[test]
    fn dedupe_rules() {
        let facts = vec![fact("a", vec![1.0, 0.0]), fact("b", vec![1.0, 0.0]), fact("c", vec![0.0, 1.0])];
        let (kept, dropped) = dedupe_facts(facts.clone(), 0.95).unwrap();
        assert_eq!(kept.iter().map(|f| f.fact_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(dropped, 1);
        let (again, _) = dedupe_facts(kept.clone(), 0.95).unwrap();
        assert_eq!(again, kept);
        assert_eq!(dedupe_facts(facts.clone(), 1.0).unwrap().0.len(), 2);
        assert!(matches!(dedupe_facts(facts.clone(), 1.0 + 1e-9), Err(ExtractError::InvalidThreshold(_))));
        let mut bare = facts;
        bare[1].embedding = None;
        assert!(matches!(dedupe_facts(bare, 0.9), Err(ExtractError::MissingEmbedding(id)) if id == "b"));
    }

    #[test]
    fn distinct_mock_facts_are_kept() {
        let gw = Gateway::mock(2);
        let mut facts: Vec<Fact> = ["I adopted a kitten.", "My brother plays cello.", "We repainted the kitchen."]
            .iter()
            .enumerate()
            .map(|(i, t)| Fact { fact_id: format!("f{i}"), source_session_id: "s1".into(), text: t.to_string(), embedding: None, token_count: 0 })
            .collect();
        embed_facts(&gw, &mut facts).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                let c = facts[i].embedding.as_ref().unwrap().cosine(facts[j].embedding.as_ref().unwrap());
                assert!(c < 0.95);
            }
        }
        assert_eq!(dedupe_facts(facts, 0.95).unwrap().0.len(), 3);
    }
}
