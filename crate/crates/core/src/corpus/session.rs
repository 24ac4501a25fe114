//! Scenario text to a multi-turn session transcript.

use chrono::NaiveDateTime;
use tracing::warn;

use super::CorpusError;
use crate::gateway::{prompts, vars, Gateway, Role};
use crate::model::{Session, Speaker, Utterance};
use crate::text::{content_word_set, words};

pub const MIN_TURNS: usize = 10;
/// Key words may not appear in the first this-many turns.
pub const WARM_UP_TURNS: usize = 4;
pub const VALIDATION_WARNING_TAG: &str = "validation-warning";

fn speaker_of(label: &str) -> Option<Speaker> {
    let compact: String = label.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
    match compact.as_str() {
        "speaker1" | "user" | "human" => Some(Speaker::User),
        "speaker2" | "assistant" | "ai" | "bot" | "chatbot" => Some(Speaker::Assistant),
        _ => None,
    }
}

/// Parses `Speaker1:` / `Assistant:` lines into turns. Unlabelled lines
/// continue the previous turn; leading assistant turns are dropped so the
/// session opens with the user.
pub fn parse_transcript(text: &str) -> Vec<Utterance> {
    let mut turns: Vec<Utterance> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let labelled = line.split_once(':').and_then(|(label, rest)| {
            let label = label.trim_matches(['*', ' ']);
            (label.len() <= 12).then(|| speaker_of(label)).flatten().map(|role| (role, rest.trim()))
        });
        match labelled {
            Some((role, rest)) => turns.push(Utterance { role, text: rest.to_string() }),
            None => {
                if let Some(last) = turns.last_mut() {
                    last.text.push(' ');
                    last.text.push_str(line);
                }
            }
        }
    }
    turns.retain(|t| !t.text.trim().is_empty());
    let first_user = turns.iter().position(|t| t.role == Speaker::User).unwrap_or(turns.len());
    turns.drain(..first_user);
    turns
}

/// True when none of the scenario's content words occur in the warm-up turns.
pub fn mentions_late(turns: &[Utterance], scenario: &str) -> bool {
    let keys = content_word_set(scenario);
    !turns
        .iter()
        .take(WARM_UP_TURNS)
        .any(|t| words(&t.text).iter().any(|w| keys.contains(w)))
}

/// Relabels a human-human dialogue by alternating speakers, starting with the
/// user. Any `Name:` prefix on a line is removed.
pub fn relabel_alternating(lines: &[String]) -> Vec<Utterance> {
    lines
        .iter()
        .map(|l| {
            let l = l.trim();
            match l.split_once(':') {
                Some((name, rest)) if !name.is_empty() && name.len() <= 20 && !name.contains(' ') => rest.trim(),
                _ => l,
            }
        })
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, t)| if i % 2 == 0 { Utterance::user(t) } else { Utterance::assistant(t) })
        .collect()
}

/// Expands a scenario into a session. A transcript that is too short or
/// mentions the scenario too early gets one regeneration and is then accepted
/// with a [`VALIDATION_WARNING_TAG`].
pub fn expand_to_session(
    gw: &Gateway,
    scenario: &str,
    session_id: &str,
    timestamp: NaiveDateTime,
    tags: Vec<String>,
    variant: &str,
) -> Result<Session, CorpusError> {
    if scenario.trim().is_empty() {
        return Err(CorpusError::EmptyInput("scenario"));
    }
    let mut fallback: Option<Vec<Utterance>> = None;
    for attempt in 0..2 {
        let mut v = vars([("scenario", scenario.trim().to_string())]);
        if !variant.is_empty() || attempt > 0 {
            v.insert("variant".into(), format!("{variant}/{attempt}"));
        }
        let reply = gw.chat(Role::Generator, &prompts::SESSION_EXPAND, &v)?;
        let turns = parse_transcript(&reply.text);
        if turns.is_empty() {
            warn!(session_id, attempt, "transcript did not parse");
            continue;
        }
        if turns.len() >= MIN_TURNS && mentions_late(&turns, scenario) {
            return Ok(Session { session_id: session_id.to_string(), timestamp, tags, turns });
        }
        warn!(session_id, attempt, turns = turns.len(), "transcript failed validation");
        fallback.get_or_insert(turns);
    }
    match fallback {
        Some(turns) => {
            let mut tags = tags;
            tags.push(VALIDATION_WARNING_TAG.to_string());
            Ok(Session { session_id: session_id.to_string(), timestamp, tags, turns })
        }
        None => Err(CorpusError::UnparseableTranscript(session_id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendFailure, ChatBackend, ChatRequest, Completion};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn ts() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn twelve_turns_parse() {
        let text: String = (0..6).map(|i| format!("Speaker1: line {i}\nAssistant: reply {i}\n\n")).collect();
        let turns = parse_transcript(&text);
        assert_eq!(turns.len(), 12);
        assert_eq!(turns[0].role, Speaker::User);
        let turns = parse_transcript("Assistant: hi\nSpeaker 1: hello\nmore text\nAI: ok");
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].text, "hello more text");
    }

    #[test]
    fn mock_session_is_valid() {
        let gw = Gateway::mock(1);
        let s = expand_to_session(&gw, "I sprained my ankle during a hectic relocation.", "t0-rstar", ts(), vec!["evidence".into()], "").unwrap();
        assert!(s.turns.len() >= MIN_TURNS);
        assert_eq!(s.turns[0].role, Speaker::User);
        assert!(!s.has_tag(VALIDATION_WARNING_TAG));
        s.validate().unwrap();
    }

    struct Early(AtomicUsize);

    impl ChatBackend for Early {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
            self.0.fetch_add(1, Ordering::SeqCst);
            let mut text = String::from("Speaker1: My ankle hurts.\nAssistant: Oh no.\n");
            for i in 0..5 {
                text.push_str(&format!("Speaker1: filler {i}\nAssistant: ok\n"));
            }
            Ok(Completion { text, usage: None })
        }
    }

    #[test]
    fn early_mention_regenerates_then_warns() {
        let backend = Arc::new(Early(AtomicUsize::new(0)));
        let gw = Gateway::mock(1).with_chat_backend(Role::Generator, backend.clone());
        let s = expand_to_session(&gw, "I sprained my ankle.", "x", ts(), vec![], "").unwrap();
        assert_eq!(backend.0.load(Ordering::SeqCst), 2);
        assert!(s.has_tag(VALIDATION_WARNING_TAG));
    }

    struct Garbage;

    impl ChatBackend for Garbage {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
            Ok(Completion { text: "no speakers here".into(), usage: None })
        }
    }

    #[test]
    fn unparseable_transcript() {
        let gw = Gateway::mock(1).with_chat_backend(Role::Generator, Arc::new(Garbage));
        assert!(matches!(expand_to_session(&gw, "x y", "s", ts(), vec![], ""), Err(CorpusError::UnparseableTranscript(_))));
    }

    #[test]
    fn relabel() {
        let lines = vec!["Ann: hi".to_string(), "Bob: hello there".into(), "how are you".into()];
        let u = relabel_alternating(&lines);
        assert_eq!(u, vec![Utterance::user("hi"), Utterance::assistant("hello there"), Utterance::user("how are you")]);
    }
}
