//! Noise pools: sessions from other dialogue sources, loaded from disk or
//! synthesized for offline runs.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusError;
use crate::model::{read_history, Session, Utterance};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolSource {
    pub name: String,
    pub sessions: Vec<Session>,
}

/// Every `*.jsonl` file under `dir` (sorted by name) is one source.
pub fn load_pool(dir: &Path) -> Result<Vec<PoolSource>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let history = read_history(&path)?;
        if history.sessions.is_empty() {
            continue;
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(PoolSource { name, sessions: history.sessions });
    }
    if out.is_empty() {
        return Err(CorpusError::PoolTooSmall { needed: 1, available: 0 });
    }
    Ok(out)
}

/// Persona seeds for demos and tests. Each one leads with a distinct hobby.
pub const SAMPLE_PERSONAS: &[&str] = &[
    "a gardening enthusiast who volunteers at the community orchard",
    "a climbing fanatic working as a veterinary nurse",
    "a photography lover who restores vintage cameras",
    "a knitting hobbyist raising three teenagers",
    "a surfing addict who teaches high school chemistry",
    "a chess player who commutes by train every day",
    "a baking devotee who runs a small bookshop",
    "a cycling commuter and part-time translator",
    "a birdwatching retiree living near the coast",
    "a pottery student working night shifts at a hospital",
    "a skateboarding barista saving for college",
    "a fishing fan who repairs boats for a living",
    "a painting amateur who works in accounting",
    "a swimming coach who collects vinyl records",
    "a camping lover and freelance illustrator",
    "a woodworking carpenter who mentors apprentices",
    "a dancing instructor who grew up in Lisbon",
    "a skiing veteran and software tester",
    "a hiking guide who studies geology at night",
    "a volleyball player working in logistics",
    "a sewing crafter who sells quilts online",
    "a tennis player recovering from a career change",
    "a journaling writer who works as a paralegal",
    "a kayaking paramedic from a river town",
];

const POOL_TOPICS: &[&str] = &[
    "budget spreadsheets", "apartment leases", "tax forms", "printer drivers", "train timetables",
    "insurance claims", "laundry stains", "router settings", "passport photos", "moving boxes",
    "resume layouts", "parking permits", "dentist appointments", "bank transfers", "phone plans",
    "grocery coupons", "library fines", "recycling rules", "password managers", "calendar invites",
];

const POOL_USER_LINES: &[&str] = &[
    "How can I sort out {topic} now?",
    "How can I get help with {topic} now?",
    "Can I finish the {topic} now or later?",
    "I keep putting off the {topic}.",
    "My friend says {topic} are simple now.",
    "How long do {topic} usually take?",
    "I found an old note about {topic}.",
    "Can you explain {topic} again?",
];

const LEISURE_TOPICS: &[&str] = &[
    "cooking", "gardening", "painting", "cycling", "photography", "chess", "baking", "hiking", "swimming", "knitting",
    "running", "fishing", "singing", "reading", "camping", "dancing", "climbing", "pottery", "yoga", "surfing",
    "birdwatching", "skateboarding", "woodworking", "skiing", "volleyball", "sewing", "tennis", "journaling", "kayaking",
];

const LEISURE_USER_LINES: &[&str] = &[
    "Does anyone really enjoy {topic} this much?",
    "My neighbour wants to try {topic} this year.",
    "Is {topic} expensive to get into?",
    "I read an article about {topic} yesterday.",
    "Do people usually take classes for {topic}?",
    "What gear does {topic} need?",
    "My cousin quit {topic} last spring.",
    "Would {topic} be fun for a group?",
];

const POOL_ASSISTANT_LINES: &[&str] = &[
    "Sure, let us go through it together.",
    "A checklist usually makes this easier.",
    "Start with the part that has a deadline.",
    "That happens to a lot of people.",
    "You could set aside half an hour for it.",
    "Keep copies of everything you submit.",
];

/// Deterministic chit-chat sources alternating between errands and leisure
/// talk. Each session has at least ten turns and begins with the user.
pub fn synthetic_pool(n_sources: usize, sessions_per_source: usize, seed: u64) -> Vec<PoolSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date").and_hms_opt(12, 0, 0).expect("valid time");
    (0..n_sources)
        .map(|src| {
            let sessions = (0..sessions_per_source)
                .map(|j| {
                    let (topics, lines) =
                        if j % 2 == 0 { (POOL_TOPICS, POOL_USER_LINES) } else { (LEISURE_TOPICS, LEISURE_USER_LINES) };
                    let mut topic = topics.choose(&mut rng).expect("non-empty");
                    let pairs = rng.gen_range(5..8);
                    let mut turns = Vec::with_capacity(pairs * 2);
                    for _ in 0..pairs {
                        // Leisure talk drifts between hobbies; errands stay on one topic.
                        if j % 2 == 1 {
                            topic = topics.choose(&mut rng).expect("non-empty");
                        }
                        let line = lines.choose(&mut rng).expect("non-empty").replace("{topic}", topic);
                        turns.push(Utterance::user(line));
                        turns.push(Utterance::assistant(*POOL_ASSISTANT_LINES.choose(&mut rng).expect("non-empty")));
                    }
                    Session {
                        session_id: format!("s{j:03}"),
                        timestamp: base + Duration::days(j as i64),
                        tags: Vec::new(),
                        turns,
                    }
                })
                .collect();
            PoolSource { name: format!("src{src}"), sessions }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{serialize_history, ConversationHistory};

    #[test]
    fn synthetic_sessions_are_valid() {
        let pool = synthetic_pool(2, 10, 7);
        assert_eq!(pool.len(), 2);
        for s in pool.iter().flat_map(|p| &p.sessions) {
            s.validate().unwrap();
            assert!(s.turns.len() >= 10);
        }
        assert_eq!(pool, synthetic_pool(2, 10, 7));
    }

    #[test]
    fn load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pool(dir.path()), Err(CorpusError::PoolTooSmall { .. })));
        for src in synthetic_pool(2, 4, 1) {
            let h = ConversationHistory::new(src.name.clone(), vec![], src.sessions).unwrap();
            std::fs::write(dir.path().join(format!("{}.jsonl", src.name)), serialize_history(&h)).unwrap();
        }
        let pool = load_pool(dir.path()).unwrap();
        assert_eq!(pool.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["src0", "src1"]);
        assert_eq!(pool[0].sessions.len(), 4);
    }
}
