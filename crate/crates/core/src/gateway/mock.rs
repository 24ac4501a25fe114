//! Deterministic offline backend.
//!
//! Every response is a pure function of the template id and the bound
//! variables:
//!
//! * embeddings are signed feature-hashed bags of words (dim 64), later
//!   L2-normalized by the gateway;
//! * summarization returns `"SUM:"` followed by the input lines (each capped at
//!   512 bytes, any `SUM:` prefix stripped) joined by spaces;
//! * relevance judging selects candidates sharing at least one content word
//!   (four or more characters, case-folded, not a stopword) with the query;
//! * fact extraction returns the user-turn sentences verbatim, one per line;
//! * generation prompts return templated pseudo-text seeded by a hash of the
//!   inputs.
//!
//! Because a summary contains every word of its inputs and the judge is
//! monotone under substring containment, tree retrieval over mock summaries
//! loses nothing relative to judging each fact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendFailure, ChatBackend, ChatRequest, Completion, EmbedBackend, Vars};
use crate::text::{self, content_word_set, content_words, fnv1a, sentences, shares_content_word, words};

pub const MOCK_EMBED_DIM: usize = 64;
pub const MOCK_SUMMARY_INPUT_BYTES: usize = 512;

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

fn seeded_rng(template_id: &str, vars: &Vars) -> ChaCha8Rng {
    let mut buf = Vec::from(template_id.as_bytes());
    for (k, v) in vars {
        buf.push(0);
        buf.extend_from_slice(k.as_bytes());
        buf.push(1);
        buf.extend_from_slice(v.as_bytes());
    }
    ChaCha8Rng::seed_from_u64(fnv1a(&buf))
}

fn var<'a>(vars: &'a Vars, name: &str) -> &'a str {
    vars.get(name).map(String::as_str).unwrap_or("")
}

/// Tokens fed to the hashed embedding: words of three or more characters that
/// are not stopwords, falling back to every word for very short texts.
fn embedding_tokens(input: &str) -> Vec<String> {
    let all = words(input);
    let kept: Vec<String> = all.iter().filter(|w| w.chars().count() >= 3 && !text::is_stopword(w)).cloned().collect();
    if kept.is_empty() {
        all
    } else {
        kept
    }
}

/// Raw (unnormalized) hashed bag-of-words vector.
pub fn mock_embedding(input: &str) -> Vec<f32> {
    let mut v = vec![0.0f32; MOCK_EMBED_DIM];
    for token in embedding_tokens(input) {
        let h = fnv1a(token.as_bytes());
        let idx = (h % MOCK_EMBED_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    v
}

pub fn mock_summary(lines: &[&str]) -> String {
    let parts: Vec<&str> = lines
        .iter()
        .map(|l| l.trim())
        .map(|l| l.strip_prefix("SUM:").unwrap_or(l).trim())
        .filter(|l| !l.is_empty())
        .map(|l| text::truncate_bytes(l, MOCK_SUMMARY_INPUT_BYTES))
        .collect();
    format!("SUM:{}", parts.join(" "))
}

/// Parses `[n] text` lines.
fn numbered_brackets(block: &str) -> Vec<(usize, String)> {
    block
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let rest = l.strip_prefix('[')?;
            let close = rest.find(']')?;
            let idx = rest[..close].trim().parse().ok()?;
            Some((idx, rest[close + 1..].trim().to_string()))
        })
        .collect()
}

/// Parses `n: text` or `n. text` lines.
pub(crate) fn numbered_items(block: &str) -> Vec<String> {
    block
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits == 0 {
                return None;
            }
            let rest = l[digits..].trim_start();
            let rest = rest.strip_prefix([':', '.', ')'])?.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

const OPPOSED_EVENTS: &[&str] = &[
    "sprained my ankle", "fractured my wrist", "injured my knee", "strained my shoulder",
    "lost my passport", "sold my bicycle", "flooded my basement", "cracked my phone screen",
    "started a demanding night shift", "moved into a tiny studio apartment", "adopted a newborn puppy",
    "developed a stubborn pollen allergy", "signed up for an intensive evening course",
    "had my driving licence suspended", "became the caregiver for my grandmother",
    "had surgery on my spine", "broke my reading glasses", "lost hearing in my left ear",
    "started physical therapy for my elbow", "took a second job at a warehouse",
    "had my savings drained by a roof repair", "was assigned to a remote oil rig",
    "got a persistent ringing in my ears", "had my hands blistered by eczema",
    "had my workshop condemned by inspectors", "was prescribed strict bed rest",
    "twisted my hip in a fall", "started chemotherapy sessions", "lost my voice to laryngitis",
    "had my studio flooded by a burst pipe", "was diagnosed with severe asthma",
    "relocated to a village without internet", "had my laptop stolen", "tore a ligament in my thumb",
    "got a concussion from a collision", "developed migraines triggered by bright light",
    "committed every evening to nursing school", "had my membership revoked after a dispute",
    "was placed under a strict medical diet", "had my instrument crushed in transit",
];

const OPPOSED_CAUSES: &[&str] = &[
    "during a hectic relocation", "after a chaotic storm", "following a careless accident",
    "because of a sudden budget crisis", "after a messy warehouse inventory", "following a doctor visit",
    "during a turbulent family emergency", "after an unexpected promotion", "amid a harsh winter",
    "following a long hospital stay", "after a clumsy misstep on icy stairs", "during a frantic deadline",
    "after an exhausting marathon of overtime", "following a landlord dispute", "amid a neighborhood renovation",
];

const SUPPORTIVE_THINGS: &[&str] = &[
    "My calendar", "My bookshelf", "My notebook", "My garage", "My browser history", "My mailbox",
    "My spare room", "My closet", "My weekend routine", "My travel budget", "My phone gallery",
    "My desk drawer", "My monthly spending", "My group chat", "My backpack", "My kitchen counter",
];

const SUPPORTIVE_STATES: &[&str] = &[
    "is crowded with reminders about meetups", "keeps filling with specialized gear",
    "is covered in scribbled plans and sketches", "holds receipts from niche shops",
    "is packed with tickets from recent events", "shows late nights spent researching techniques",
    "has a dedicated corner for practice", "is mostly subscriptions to specialist newsletters",
    "is full of photos from weekend outings", "keeps getting parcels of supplies",
    "revolves around early morning sessions", "is dominated by tutorials and guides",
    "contains a detailed log of my progress", "is planned around community gatherings",
];

const GREETINGS: &[&str] = &[
    "Good day, hope things are going fine.", "Hi there, quick question for you.",
    "Hey, got a minute?", "Hello again, nice to talk to you.", "Hello! Coffee is finally kicking in.",
    "Hi, I have something on my mind today.", "Hey there, happy Monday.", "Hi! It has been ages.",
];

const SMALLTALK: &[&str] = &[
    "The weather has been pretty mild lately.", "I just finished a cup of tea.",
    "Traffic was calm on the way home.", "My neighbor waved at me earlier.",
    "The radio played an old song today.", "I tidied up the hallway earlier.",
    "The sunset looked lovely yesterday.", "I finally replied to a pile of emails.",
];

const CLOSINGS: &[&str] = &["Thanks for listening.", "Okay, that helps a lot.", "Great, talk soon.", "Appreciate the advice."];

const ASSISTANT_LINES: &[&str] = &[
    "Happy to help with whatever you need.", "That sounds important, tell me more.",
    "I understand, that can be a lot to handle.", "Let us think it through step by step.",
    "Good to hear from you.", "That is a fair point.", "Here is one idea you could try.",
    "I will keep that in mind for later.",
];

const COMPANIONS: &[&str] = &["cousin", "roommate", "coworker", "sister", "neighbor", "teammate", "brother", "classmate"];
const DAYS: &[&str] = &["saturday", "sunday", "friday", "holidays", "evenings", "mornings"];

/// The predicate part of a "This person ..." trait, without the first verb.
pub(crate) fn trait_object(trait_text: &str) -> String {
    let body = trait_text.trim().trim_end_matches('.');
    let body = body.strip_prefix("This person").unwrap_or(body).trim();
    let mut parts = body.splitn(2, ' ');
    let _verb = parts.next();
    parts.next().unwrap_or(body).trim().to_string()
}

fn respond(template_id: &str, vars: &Vars) -> String {
    let mut rng = seeded_rng(template_id, vars);
    match template_id {
        "fact_extract" => {
            let with_assistant = var(vars, "speakers").contains("assistant");
            var(vars, "transcript")
                .lines()
                .filter_map(|l| {
                    l.strip_prefix("User:")
                        .or_else(|| if with_assistant { l.strip_prefix("Assistant:") } else { None })
                })
                .flat_map(sentences)
                .collect::<Vec<_>>()
                .join("\n")
        }
        "summarize_leaf" | "summarize_high" => {
            let lines: Vec<&str> = var(vars, "text").lines().collect();
            mock_summary(&lines)
        }
        "relevance_batch" => {
            let query = var(vars, "query");
            let hits: Vec<String> = numbered_brackets(var(vars, "candidates"))
                .into_iter()
                .filter(|(_, t)| shares_content_word(query, t))
                .map(|(i, _)| i.to_string())
                .collect();
            if hits.is_empty() {
                "NONE".into()
            } else {
                hits.join(", ")
            }
        }
        "relevance_single" => {
            if shares_content_word(var(vars, "query"), var(vars, "candidate")) { "YES" } else { "NO" }.into()
        }
        "supportive_verify" => match rng.gen_range(0..10) {
            0..=5 => "yes",
            6..=7 => "no",
            _ => "uncertain",
        }
        .into(),
        "answer" => mock_answer(var(vars, "question"), var(vars, "context")),
        "judge_answer" => {
            if mock_judge(var(vars, "gold"), var(vars, "predicted")) { "YES" } else { "NO" }.into()
        }
        "persona_standardize" => mock_persona(var(vars, "persona")),
        "opposed_scenarios" => {
            let mut pairs: Vec<(usize, usize)> =
                (0..OPPOSED_EVENTS.len()).flat_map(|e| (0..OPPOSED_CAUSES.len()).map(move |c| (e, c))).collect();
            pairs.shuffle(&mut rng);
            let mut used_events = Vec::new();
            let mut out = Vec::new();
            for (e, c) in pairs {
                if used_events.contains(&e) {
                    continue;
                }
                used_events.push(e);
                out.push(format!("{}: I {} {}.", out.len() + 1, OPPOSED_EVENTS[e], OPPOSED_CAUSES[c]));
                if out.len() == 20 {
                    break;
                }
            }
            out.join("\n")
        }
        "supportive_scenarios" => {
            let mut pairs: Vec<(usize, usize)> = (0..SUPPORTIVE_THINGS.len())
                .flat_map(|a| (0..SUPPORTIVE_STATES.len()).map(move |b| (a, b)))
                .collect();
            pairs.shuffle(&mut rng);
            pairs
                .iter()
                .take(20)
                .enumerate()
                .map(|(i, (a, b))| format!("{}: {} {}.", i + 1, SUPPORTIVE_THINGS[*a], SUPPORTIVE_STATES[*b]))
                .collect::<Vec<_>>()
                .join("\n")
        }
        "opposed_question" => {
            let object = trait_object(var(vars, "per_info"));
            let reason_words = content_words(var(vars, "reason_info"));
            let bridge = reason_words.choose(&mut rng).cloned().unwrap_or_default();
            format!("How can I do {object} now, with my {bridge}?")
        }
        "opposed_select" => {
            let items = numbered_items(var(vars, "str_reason"));
            items.choose(&mut rng).cloned().unwrap_or_else(|| "none of these".into())
        }
        "distractor_scenarios" => {
            let object = var(vars, "traits_info");
            (0..5)
                .map(|i| {
                    let who = COMPANIONS.choose(&mut rng).unwrap();
                    let day = DAYS.choose(&mut rng).unwrap();
                    format!("{}. I can do {object} now with my {who} on {day}, and how fun it is.", i + 1)
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        "session_expand" => mock_transcript(var(vars, "scenario"), &mut rng),
        _ => {
            let n = rng.gen_range(6..12);
            let body: Vec<&str> = (0..n).map(|_| *SMALLTALK.choose(&mut rng).unwrap()).collect();
            format!("MOCK:{}", body.join(" "))
        }
    }
}

fn mock_persona(persona: &str) -> String {
    let description = persona.trim().trim_end_matches('.');
    let hobbies: Vec<String> = content_words(description)
        .into_iter()
        .take(3)
        .map(|w| format!("\"This person enjoys {w}.\""))
        .collect();
    format!(
        "```json\n{{\n    \"demographics\": {{\n        \"description\": \"This person is described as {}.\"\n    }},\n    \"everyday_life_and_hobbies\": [\n        {}\n    ]\n}}\n```",
        description.replace('"', "'"),
        hobbies.join(",\n        ")
    )
}

fn mock_transcript(scenario: &str, rng: &mut ChaCha8Rng) -> String {
    let scenario = scenario.trim();
    let keyword = content_words(scenario).into_iter().next().unwrap_or_else(|| "situation".into());
    let user = [
        GREETINGS.choose(rng).unwrap().to_string(),
        SMALLTALK.choose(rng).unwrap().to_string(),
        scenario.to_string(),
        format!("The {keyword} part keeps coming up for me."),
        SMALLTALK.choose(rng).unwrap().to_string(),
        CLOSINGS.choose(rng).unwrap().to_string(),
    ];
    let mut lines = Vec::new();
    for u in user {
        lines.push(format!("Speaker1: {u}"));
        lines.push(format!("Assistant: {}", ASSISTANT_LINES.choose(rng).unwrap()));
        lines.push(String::new());
    }
    lines.join("\n").trim_end().to_string()
}

fn is_yes_no_question(q: &str) -> bool {
    const AUX: &[&str] = &["does", "do", "did", "is", "are", "was", "were", "can", "could", "will", "would", "has", "have", "should", "am"];
    words(q).first().is_some_and(|w| AUX.contains(&w.as_str()))
}

fn mock_answer(question: &str, context: &str) -> String {
    if is_yes_no_question(question) {
        return if !context.trim().is_empty() && shares_content_word(question, context) { "Yes." } else { "No." }.into();
    }
    if context.trim().is_empty() {
        return "I don't know.".into();
    }
    format!("From what you told me: {}", text::truncate_bytes(context.trim(), 2048))
}

fn mock_judge(gold: &str, predicted: &str) -> bool {
    let gold_words = words(gold);
    if gold_words.len() == 1 && (gold_words[0] == "yes" || gold_words[0] == "no") {
        return words(predicted).first() == gold_words.first();
    }
    let wanted = content_word_set(gold);
    if wanted.is_empty() {
        return words(gold) == words(predicted);
    }
    let have = content_word_set(predicted);
    let hit = wanted.iter().filter(|w| have.contains(*w)).count();
    hit * 2 >= wanted.len()
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendFailure> {
        Ok(Completion { text: respond(request.template_id, request.vars), usage: None })
    }
}

impl EmbedBackend for MockBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendFailure> {
        Ok(texts.iter().map(|t| mock_embedding(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompts, vars, Gateway, Role};

    #[test]
    fn summary_contract() {
        assert_eq!(mock_summary(&["a b", "c d"]), "SUM:a b c d");
        assert_eq!(mock_summary(&["SUM:a b", "SUM:c"]), "SUM:a b c");
        let long = "x".repeat(600);
        assert_eq!(mock_summary(&[&long]).len(), 4 + 512);
    }

    #[test]
    fn similarity_ordering_under_hashing() {
        let gw = Gateway::mock(1);
        let v = gw.embed(&["the red car".into(), "red car".into(), "quantum flux".into()]).unwrap();
        assert!(v[0].cosine(&v[1]) > v[0].cosine(&v[2]));
    }

    #[test]
    fn relevance_by_shared_content_word() {
        let gw = Gateway::mock(1);
        let candidates = "[1] SUM:I broke my leg last week.\n[2] SUM:A recipe for soup with leeks.";
        let reply = gw
            .chat(
                Role::Framework,
                &prompts::RELEVANCE_BATCH,
                &vars([("query", "broken leg hiking".into()), ("candidates", candidates.into())]),
            )
            .unwrap();
        // "leg" is only three letters; "broke" != "broken"
        assert_eq!(reply.text, "NONE");
        let reply = gw
            .chat(
                Role::Framework,
                &prompts::RELEVANCE_BATCH,
                &vars([("query", "hiking after my broke accident".into()), ("candidates", candidates.into())]),
            )
            .unwrap();
        assert_eq!(reply.text, "1");
    }

    #[test]
    fn extraction_returns_user_sentences() {
        let t = "User: I broke my leg. I love hiking.\nAssistant: Sorry to hear that.";
        let out = respond("fact_extract", &vars([("transcript", t.into()), ("speakers", "user".into())]));
        assert_eq!(out, "I broke my leg.\nI love hiking.");
    }

    #[test]
    fn deterministic_generation() {
        let v = vars([("per_info", "This person enjoys gardening.".into()), ("traits_info", "gardening".into())]);
        assert_eq!(respond("opposed_scenarios", &v), respond("opposed_scenarios", &v));
        assert_eq!(numbered_items(&respond("opposed_scenarios", &v)).len(), 20);
        assert_eq!(numbered_items(&respond("supportive_scenarios", &v)).len(), 20);
    }

    #[test]
    fn filler_vocabulary_is_disjoint_from_scenarios() {
        let filler: Vec<&str> = GREETINGS.iter().chain(SMALLTALK).chain(CLOSINGS).chain(ASSISTANT_LINES).copied().collect();
        let filler_words = content_word_set(&filler.join(" "));
        let scenario_words = content_word_set(&[OPPOSED_EVENTS, OPPOSED_CAUSES, SUPPORTIVE_THINGS, SUPPORTIVE_STATES].concat().join(" "));
        let overlap: Vec<_> = filler_words.intersection(&scenario_words).collect();
        assert!(overlap.is_empty(), "{overlap:?}");
    }

    #[test]
    fn judge_and_answer() {
        assert!(mock_judge("yes", "Yes."));
        assert!(!mock_judge("yes", "No."));
        assert!(mock_judge("You can't do gardening now, due to: I sprained my ankle.", "From what you told me: I sprained my ankle and like gardening"));
        assert_eq!(mock_answer("Does this person enjoy gardening?", "I enjoy gardening."), "Yes.");
        assert_eq!(mock_answer("How can I do it?", ""), "I don't know.");
    }
}
