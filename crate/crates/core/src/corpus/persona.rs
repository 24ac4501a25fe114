//! Raw persona descriptions to standardized "This person ..." traits.

use serde_json::Value;
use tracing::warn;

use super::{CorpusError, PersonaTrait, TraitCategory};
use crate::gateway::{prompts, vars, Gateway, Role};

pub const TRAIT_PREFIX: &str = "This person";

/// Forces the exact `This person` prefix, a single sentence and a final period.
pub fn normalize_trait(raw: &str) -> Option<String> {
    let mut text = raw.trim().trim_matches(['"', '`', '-', '*', ' ']).trim().to_string();
    if text.is_empty() {
        return None;
    }
    let lower = text.to_lowercase();
    if lower.starts_with("this person") {
        text = format!("{TRAIT_PREFIX}{}", &text["this person".len()..]);
    } else {
        let rest = lower.strip_prefix("the person").or_else(|| lower.strip_prefix("they")).map(|r| r.len());
        let body = match rest {
            Some(n) => text[text.len() - n..].trim().to_string(),
            None => {
                let mut chars = text.chars();
                let first = chars.next().map(|c| c.to_lowercase().to_string()).unwrap_or_default();
                format!("{first}{}", chars.as_str())
            }
        };
        text = format!("{TRAIT_PREFIX} {body}");
    }
    // one sentence only
    if let Some(end) = text.find(['.', '!', '?']) {
        text.truncate(end);
    }
    let text = text.trim_end().to_string();
    (text.len() > TRAIT_PREFIX.len()).then(|| format!("{text}."))
}

fn category_for(key: &str) -> TraitCategory {
    let k = key.to_lowercase();
    if k.contains("demograph") {
        TraitCategory::Demographics
    } else if k.contains("career") || k.contains("work") || k.contains("professional") {
        TraitCategory::Career
    } else {
        TraitCategory::Everyday
    }
}

fn collect_strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(items) => items.iter().for_each(|i| collect_strings(i, out)),
        Value::Object(map) => map.values().for_each(|i| collect_strings(i, out)),
        _ => {}
    }
}

/// Extracts `(category, text)` pairs from the first JSON object in `reply`.
pub fn parse_persona_reply(reply: &str) -> Option<Vec<(TraitCategory, String)>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end <= start {
        return None;
    }
    let value: Value = serde_json::from_str(&reply[start..=end]).ok()?;
    let map = value.as_object()?;
    let mut out = Vec::new();
    for (key, v) in map {
        let mut texts = Vec::new();
        collect_strings(v, &mut texts);
        out.extend(texts.into_iter().filter_map(|t| normalize_trait(&t)).map(|t| (category_for(key), t)));
    }
    (!out.is_empty()).then_some(out)
}

/// Standardizes one raw persona. Trait ids are `p{persona_idx}-{j}`.
pub fn standardize_persona(gw: &Gateway, raw: &str, persona_idx: usize) -> Result<Vec<PersonaTrait>, CorpusError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(CorpusError::EmptyInput("persona"));
    }
    for attempt in 0..2 {
        let mut v = vars([("persona", raw.to_string())]);
        if attempt > 0 {
            v.insert("attempt".into(), attempt.to_string());
        }
        let reply = gw.chat(Role::Generator, &prompts::PERSONA_STANDARDIZE, &v)?;
        if let Some(items) = parse_persona_reply(&reply.text) {
            return Ok(items
                .into_iter()
                .enumerate()
                .map(|(j, (category, text))| PersonaTrait { trait_id: format!("p{persona_idx}-{j}"), text, category })
                .collect());
        }
        warn!(persona_idx, attempt, "persona reply did not parse");
    }
    Err(CorpusError::UnparseableOutput(format!("persona {persona_idx}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_restored() {
        assert_eq!(normalize_trait("Enjoys listening to pop music").unwrap(), "This person enjoys listening to pop music.");
        assert_eq!(normalize_trait("this person is a podcaster. Extra.").unwrap(), "This person is a podcaster.");
        assert_eq!(normalize_trait("They bake bread.").unwrap(), "This person bake bread.");
        assert!(normalize_trait("  ").is_none());
    }

    #[test]
    fn listing_example_parses() {
        let reply = "```json\n{\n \"demographics\": {\"nationality\": \"This person is from Azerbaijani.\"},\n \"everyday_life_and_hobbies\": [\"This person enjoys listening to pop music.\", \"likely engages in nostalgic experiences.\"]\n}\n```";
        let items = parse_persona_reply(reply).unwrap();
        assert!(items.contains(&(TraitCategory::Everyday, "This person enjoys listening to pop music.".into())));
        assert!(items.contains(&(TraitCategory::Demographics, "This person is from Azerbaijani.".into())));
        assert!(items.contains(&(TraitCategory::Everyday, "This person likely engages in nostalgic experiences.".into())));
        assert!(parse_persona_reply("no json here").is_none());
    }

    #[test]
    fn mock_persona_is_deterministic() {
        let gw = Gateway::mock(1);
        let a = standardize_persona(&gw, "a nostalgic Azerbaijani pop music lover", 0).unwrap();
        assert_eq!(a, standardize_persona(&gw, "a nostalgic Azerbaijani pop music lover", 0).unwrap());
        assert!(a.iter().any(|t| t.category == TraitCategory::Everyday));
        assert!(a.iter().all(|t| t.text.starts_with("This person ")));
        assert!(matches!(standardize_persona(&gw, " ", 0), Err(CorpusError::EmptyInput(_))));
    }
}
