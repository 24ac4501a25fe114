//! Prompt templates.
//!
//! Placeholders are written `{name}`; `{{` and `}}` render as literal braces.
//! Dataset-generation prompts are kept word for word, including their
//! original spacing, since output quality is sensitive to them.

use std::collections::{BTreeMap, BTreeSet};

use super::GatewayError;

pub type Vars = BTreeMap<String, String>;

/// Builds a [`Vars`] map from `(name, value)` pairs.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> Vars {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: &'static str,
    pub body: &'static str,
}

impl PromptTemplate {
    pub const fn new(template_id: &'static str, body: &'static str) -> Self {
        Self { template_id, body }
    }

    /// Placeholder names appearing in the body.
    pub fn required_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for segment in Segments::new(self.body) {
            if let Segment::Var(name) = segment {
                out.insert(name.to_string());
            }
        }
        out
    }

    pub fn render(&self, vars: &Vars) -> Result<String, GatewayError> {
        let mut out = String::with_capacity(self.body.len());
        for segment in Segments::new(self.body) {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Var(name) => {
                    let value = vars
                        .get(name)
                        .ok_or_else(|| GatewayError::TemplateVarMissing(name.to_string()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Var(&'a str),
}

struct Segments<'a> {
    rest: &'a str,
}

impl<'a> Segments<'a> {
    fn new(body: &'a str) -> Self {
        Self { rest: body }
    }
}

impl<'a> Iterator for Segments<'a> {
    type Item = Segment<'a>;

    fn next(&mut self) -> Option<Segment<'a>> {
        if self.rest.is_empty() {
            return None;
        }
        let rest = self.rest;
        if let Some(tail) = rest.strip_prefix("{{") {
            self.rest = tail;
            return Some(Segment::Text("{"));
        }
        if let Some(tail) = rest.strip_prefix("}}") {
            self.rest = tail;
            return Some(Segment::Text("}"));
        }
        if let Some(tail) = rest.strip_prefix('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[..end];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    self.rest = &tail[end + 1..];
                    return Some(Segment::Var(name));
                }
            }
            self.rest = tail;
            return Some(Segment::Text("{"));
        }
        let stop = rest.find(['{', '}']).unwrap_or(rest.len());
        if stop == 0 {
            // lone '}'
            self.rest = &rest[1..];
            return Some(Segment::Text("}"));
        }
        self.rest = &rest[stop..];
        Some(Segment::Text(&rest[..stop]))
    }
}

pub const PERSONA_STANDARDIZE: PromptTemplate = PromptTemplate::new(
    "persona_standardize",
    r#"
   Here is a brief description of a person:
    {persona}

    Please break it down into several components, including: "demographics" (including name, age, living location, birthplace, marital status, etc.), "career_life_and_goals" (make sure this part only contains things related with the person's career life), and "everyday_life_and_hobbies" (make sure this part is nothing related with the person's career life). Just list those information that are presented and leave others that are unknown. Below are some examples, try to make each point separate from each other and self-explanable. Only output a JSON object like in the following examples.
    Example 1:
    Input: An eco-friendly lifestyle podcaster who features change-makers and promotes sustainable living
    Output:
    ```json
    {{
        "demographics": {{
            "occupation": "This person is an eco-friendly lifestyle podcaster."
        }},
        "career_life_and_goals": [
            "This person features change-makers and promotes sustainable living."
        ]
    }}
    ```

    Example 2:
    Input: a nostalgic Azerbaijani pop music lover
    Output:
    ```json
    {{
        "demographics": {{
            "nationality": "This person is from Azerbaijani."
        }},
        "everyday_life_and_hobbies": [
            "This person enjoys listening to pop music.",
            "This person likely engages in nostalgic experiences related to Azerbaijani culture."
        ]
    }}
    ```
    "#,
);

pub const OPPOSED_SCENARIOS: PromptTemplate = PromptTemplate::new(
    "opposed_scenarios",
    r#"
    {per_info} However, they have not been able to do it recently. Can you give me at least 20 implicit reasons why that person cannot do it?
    The reasons should be completely different from each other and belong to different categories.
    The reason should be specific with detailed information, like why it happens.
    The reason cannot include words related to "{traits_info}"
    Please explain the reasoning in only one sentence. Please only output the reasons with the format:
    1:
    2:
    "#,
);

pub const SUPPORTIVE_SCENARIOS: PromptTemplate = PromptTemplate::new(
    "supportive_scenarios",
    r#"
    {per_info} Can you give me at least 20 implicit reason information that supports this claim? Therefore, if I ask you, "Does {per_info}?", you have to answer "yes".
    The reason information should be completely different from each other and belong to different categories.
    The reason should be specific with detailed information, like why it happens.
    The reason cannot include words related to "{traits_info}"
    Please explain the reasoning in only one sentence. Please only output the reasons with the format:
    1:
    2:
    "#,
);

pub const OPPOSED_QUESTION: PromptTemplate = PromptTemplate::new(
    "opposed_question",
    r#"
    Here's the conversation between a user(speaker 1) and a chatbot assistant.
    Speaker 1 has the following persona trait: {per_info}. However, speaker 1 cannot do the trait due to the reason that {reason_info}.
    Now, speaker 1 asks you a question related to the trait. {reason_info} affect your answer to this question.
    You should tell speaker 1 they cannot do the trait due to the reason.
    The trait should be mentioned in the question.
    The question itself should not mention the reason or effect of the reason.
    Questions should be asked in the first person. Include "I".
    The question should not be a yes/no question.
    The question needs to be diverse.

    Please only output the question in the format of less than 20 words without any additional sentences.
    "#,
);

pub const OPPOSED_SELECT: PromptTemplate = PromptTemplate::new(
    "opposed_select",
    r#"
    {per_info}. Here are potential implicit reasons why this person is unable to follow this trait: {str_reason}.
    Could you select the reason that is both the most logically sound and subtly implied?
    Please select only from the provided options and output the reason only.
    "#,
);

pub const DISTRACTOR_SCENARIOS: PromptTemplate = PromptTemplate::new(
    "distractor_scenarios",
    r#"
    Consider a person with specific personality traits {persona} that could serve as responses to a given question {question}.
    Can you generate additional scenarios that reflect or align with these personality traits to support the question?
    Please output 5 scenarios that are relevant to the given traits and question.
    The scenarios should contain only one sentence.
    The scenarios can talk about both {traits_info} or other stuff that is related to {traits_info} but do not have to be the same.
    Please output the scenarios only with the index number.

    For example:

    Trait: I love sports
    Question: I'm bored; can you give me some suggestions?
    Scenarios:
    1. I love playing basketball.
    2. My favorite basketball player is Stephen Curry.
    "#,
);

pub const SESSION_EXPAND: PromptTemplate = PromptTemplate::new(
    "session_expand",
    r#"
    There are two speakers. Speaker 1 encounters the scenario that "{scenario}". Speaker 2 is the AI assistant.
    Based on the information. Can you generate a conversation with at least 10 turns?
    Speaker 1 shouldn't mention the scenario too early. It must be mentioned in the later section.
    Speaker 1 is exactly the person who encounters the scenario.
    The beginning turns should serve as a warm-up to introduce the scenario in a natural way.
    The conversation should be centered around the scenario without any irrelevant or extra information that is not related to the scenario.
    For Spearker 1, please do not start the conversation by saying something similar to "I'm feeling a bit overwhelmed lately." or use the same format as this sentence.
    Include diverse styles like detailed explanations, step-by-step guidance, casual small talk, humor, storytelling, and problem-solving.
    The conversation should feel realistic and flow naturally.
    Aim for a balance of formality and informality, capturing nuanced exchanges that go beyond simple responses.
    Please output the conversation in the following format:
    Speaker1: ...
    Assistant: ...

    Speaker1: ...
    Assistant: ...
    "#,
);

pub const SUMMARIZE_HIGH: PromptTemplate = PromptTemplate::new(
    "summarize_high",
    r#"
    Can you summarize {text} in one sentence to only contain the high-level information?
    Please only output the summary without anything else.
    "#,
);

pub const SUMMARIZE_LEAF: PromptTemplate = PromptTemplate::new(
    "summarize_leaf",
    "Below are related facts about a user, one per line:\n{text}\n\n\
Write a condensed representation of these facts that retains all essential details \
(names, places, dates, quantities, preferences and constraints). \
Please only output the summary without anything else.",
);

pub const FACT_EXTRACT: PromptTemplate = PromptTemplate::new(
    "fact_extract",
    "Below is one session of a conversation between a user and an assistant.\n\n{transcript}\n\n\
Extract every fact stated by the {speakers} that could matter in future conversations: \
preferences, plans, circumstances, events, relationships, constraints and personal details. \
Write each fact as one standalone declarative sentence on its own line. \
Refer to the user as \"The user\" and resolve pronouns. \
Output only the facts, one per line, with no numbering or commentary.",
);

pub const RELEVANCE_BATCH: PromptTemplate = PromptTemplate::new(
    "relevance_batch",
    "Question: {query}\n\nNumbered memory summaries:\n{candidates}\n\n\
Which summaries contain information that helps answer the question, directly or implicitly \
(for example a circumstance that changes the answer)? \
Reply with a comma-separated list of their numbers, or NONE if no summary is relevant.",
);

pub const RELEVANCE_SINGLE: PromptTemplate = PromptTemplate::new(
    "relevance_single",
    "Question: {query}\n\nMemory: {candidate}\n\n\
Does this memory contain information that helps answer the question, directly or implicitly? \
Answer YES or NO.",
);

pub const SUPPORTIVE_VERIFY: PromptTemplate = PromptTemplate::new(
    "supportive_verify",
    "Claim: {per_info}\nScenario: {scenario}\n\n\
Does the scenario support the claim? Provide an answer only if you are certain. \
Reply with exactly one word: yes, no, or uncertain.",
);

pub const ANSWER: PromptTemplate = PromptTemplate::new(
    "answer",
    "You are an assistant with long-term memory of earlier conversations with the user.\n\n\
Relevant memories:\n{context}\n\nUser question: {question}\n\n\
Answer the question, taking the memories into account.",
);

pub const JUDGE_ANSWER: PromptTemplate = PromptTemplate::new(
    "judge_answer",
    "Question: {question}\nGround-truth answer: {gold}\nPredicted answer: {predicted}\n\n\
Is the predicted answer semantically equivalent to the ground-truth answer? Reply YES or NO.",
);

/// All templates, for listing and lookup.
pub const LIBRARY: &[PromptTemplate] = &[
    PERSONA_STANDARDIZE,
    OPPOSED_SCENARIOS,
    SUPPORTIVE_SCENARIOS,
    OPPOSED_QUESTION,
    OPPOSED_SELECT,
    DISTRACTOR_SCENARIOS,
    SESSION_EXPAND,
    SUMMARIZE_HIGH,
    SUMMARIZE_LEAF,
    FACT_EXTRACT,
    RELEVANCE_BATCH,
    RELEVANCE_SINGLE,
    SUPPORTIVE_VERIFY,
    ANSWER,
    JUDGE_ANSWER,
];

pub fn lookup(template_id: &str) -> Option<&'static PromptTemplate> {
    LIBRARY.iter().find(|t| t.template_id == template_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn braces_escape_and_vars() {
        let t = PromptTemplate::new("t", "{{a}} {name} }}{x");
        assert_eq!(t.required_vars().into_iter().collect::<Vec<_>>(), ["name"]);
        let out = t.render(&vars([("name", "Bo".into())])).unwrap();
        assert_eq!(out, "{a} Bo }{x");
    }

    #[test]
    fn missing_var_is_named() {
        let err = PERSONA_STANDARDIZE.render(&Vars::new()).unwrap_err();
        assert!(matches!(err, GatewayError::TemplateVarMissing(n) if n == "persona"));
    }

    #[test]
    fn library_renders_without_leftover_placeholders() {
        for t in LIBRARY {
            let v: Vars = t.required_vars().into_iter().map(|k| (k, "VALUE".to_string())).collect();
            let out = t.render(&v).unwrap();
            for name in t.required_vars() {
                assert!(!out.contains(&format!("{{{name}}}")), "{} left {name}", t.template_id);
            }
        }
        // literal JSON braces survive in the persona prompt
        let out = PERSONA_STANDARDIZE.render(&vars([("persona", "x".into())])).unwrap();
        assert!(out.contains("\"demographics\": {"));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn ids_are_unique() {
        let ids: BTreeSet<_> = LIBRARY.iter().map(|t| t.template_id).collect();
        assert_eq!(ids.len(), LIBRARY.len());
    }
}
