//! Question/answer construction for opposed and supportive tasks.

use tracing::warn;

use super::scenarios::trait_object;
use super::{CorpusError, PersonaTrait, QaTask, ReasoningKind};
use crate::gateway::{prompts, vars, Gateway, Role};
use crate::text::{verb_base_form, words};

pub const MAX_QUESTION_WORDS: usize = 20;

/// Splits "This person <verb> <rest>." into `(verb, rest)`.
pub(super) fn split_trait(trait_text: &str) -> (String, String) {
    let body = trait_text.trim().trim_end_matches('.');
    let body = body.strip_prefix("This person").unwrap_or(body).trim();
    let mut parts = body.splitn(2, ' ');
    let verb = parts.next().unwrap_or("").to_string();
    (verb, parts.next().unwrap_or("").trim().to_string())
}

/// "This person enjoys X." becomes "Does this person enjoy X?".
pub fn supportive_question(trait_text: &str) -> String {
    let (verb, rest) = split_trait(trait_text);
    let lower = verb.to_lowercase();
    let tail = if rest.is_empty() { String::new() } else { format!(" {rest}") };
    match lower.as_str() {
        "is" | "was" | "can" | "will" | "should" | "would" | "could" => {
            let mut cap = lower.clone();
            cap[..1].make_ascii_uppercase();
            format!("{cap} this person{tail}?")
        }
        _ => format!("Does this person {}{tail}?", verb_base_form(&verb)),
    }
}

/// First-person restatement of a trait, used as the trait session's seed.
pub fn first_person(trait_text: &str) -> String {
    let (verb, rest) = split_trait(trait_text);
    let verb = match verb.to_lowercase().as_str() {
        "is" => "am".to_string(),
        "was" => "was".to_string(),
        "can" | "will" | "should" | "would" | "could" => verb.to_lowercase(),
        _ => verb_base_form(&verb),
    };
    let rest = rest
        .split(' ')
        .map(|w| match w {
            "their" => "my",
            "they" => "I",
            "them" | "themselves" => "myself",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" ");
    format!("I {verb} {rest}.").replace(" .", ".")
}

pub fn question_is_valid(q: &str) -> bool {
    let n = q.split_whitespace().count();
    n > 0 && n < MAX_QUESTION_WORDS && q.contains('?') && words(q).iter().any(|w| w == "i")
}

/// Gold answer for an opposed task: the trait is blocked by the scenario.
pub fn opposed_gold(trait_text: &str, scenario: &str) -> String {
    format!("You can't {} now, due to: {}", trait_object(trait_text), scenario.trim())
}

/// Asks for a first-person question about the trait that the selected
/// scenario silently changes. Invalid questions get one re-ask and are never
/// truncated.
pub fn make_opposed_qa(gw: &Gateway, t: &PersonaTrait, selected: &str, task_id: &str, variant: &str) -> Result<QaTask, CorpusError> {
    for attempt in 0..2 {
        let mut v = vars([("per_info", t.text.clone()), ("reason_info", selected.to_string())]);
        if !variant.is_empty() || attempt > 0 {
            v.insert("variant".into(), format!("{variant}/{attempt}"));
        }
        let reply = gw.chat(Role::Generator, &prompts::OPPOSED_QUESTION, &v)?;
        let question = reply.text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string();
        if question_is_valid(&question) {
            return Ok(QaTask {
                task_id: task_id.to_string(),
                trait_id: t.trait_id.clone(),
                kind: ReasoningKind::Opposed,
                question,
                gold_answer: opposed_gold(&t.text, selected),
                evidence_session_ids: Vec::new(),
                yes_no: false,
                trait_session_id: None,
                noise_session_ids: Vec::new(),
            });
        }
        warn!(trait_id = %t.trait_id, attempt, %question, "rejected opposed question");
    }
    Err(CorpusError::QuestionTooLong(t.trait_id.clone()))
}

pub fn make_supportive_qa(t: &PersonaTrait, verified: usize, task_id: &str) -> QaTask {
    QaTask {
        task_id: task_id.to_string(),
        trait_id: t.trait_id.clone(),
        kind: ReasoningKind::Supportive,
        question: supportive_question(&t.text),
        gold_answer: if verified > 0 { "yes" } else { "no" }.into(),
        evidence_session_ids: Vec::new(),
        yes_no: true,
        trait_session_id: None,
        noise_session_ids: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraitCategory;
    use crate::gateway::{BackendFailure, ChatBackend, ChatRequest, Completion};
    use crate::text::content_word_set;
    use std::sync::Arc;

    fn t(text: &str) -> PersonaTrait {
        PersonaTrait { trait_id: "p0-0".into(), text: text.into(), category: TraitCategory::Everyday }
    }

    #[test]
    fn supportive_template() {
        assert_eq!(supportive_question("This person shares facts on a personal blog."), "Does this person share facts on a personal blog?");
        assert_eq!(supportive_question("This person is a night owl."), "Is this person a night owl?");
        assert_eq!(supportive_question("This person has two cats."), "Does this person have two cats?");
        let task = make_supportive_qa(&t("This person shares facts on a personal blog."), 1, "x");
        assert_eq!(task.gold_answer, "yes");
        assert!(task.yes_no);
        assert_eq!(make_supportive_qa(&t("This person bakes."), 0, "x").gold_answer, "no");
    }

    #[test]
    fn first_person_forms() {
        assert_eq!(first_person("This person enjoys gardening."), "I enjoy gardening.");
        assert_eq!(first_person("This person is a night owl."), "I am a night owl.");
        assert_eq!(first_person("This person walks their dog."), "I walk my dog.");
    }

    #[test]
    fn mock_opposed_question() {
        let gw = Gateway::mock(1);
        let selected = "I sprained my ankle during a hectic relocation.";
        let task = make_opposed_qa(&gw, &t("This person enjoys gardening."), selected, "x", "").unwrap();
        assert!(question_is_valid(&task.question));
        assert!(!task.yes_no);
        let gold = content_word_set(&task.gold_answer);
        assert!(content_word_set(selected).iter().all(|w| gold.contains(w)));
    }

    struct Wordy;

    impl ChatBackend for Wordy {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
            Ok(Completion { text: "Could I please ask you something long about this thing that I have been wondering about for quite some time now?".into(), usage: None })
        }
    }

    #[test]
    fn long_question_rejected() {
        let gw = Gateway::mock(1).with_chat_backend(Role::Generator, Arc::new(Wordy));
        let err = make_opposed_qa(&gw, &t("This person enjoys gardening."), "I moved.", "x", "").unwrap_err();
        assert!(matches!(err, CorpusError::QuestionTooLong(_)));
        assert_eq!(gw.call_log().len(), 2);
    }
}
