//! Lexical helpers shared by the mock backend, validators and the corpus pipeline.

use std::collections::BTreeSet;

/// Function words and glue vocabulary that never count as content words.
///
/// Only words of four or more characters are listed; shorter tokens are never
/// content words anyway.
const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "also", "always", "among", "another", "anyone",
    "anything", "around", "because", "been", "before", "being", "below", "between", "both",
    "cannot", "could", "does", "doing", "done", "down", "during", "each", "either", "else",
    "enjoy", "enjoyed", "enjoying", "enjoys", "even", "ever", "every", "from", "further", "gets",
    "give", "going", "gone", "have", "having", "hello", "here", "hers", "herself", "himself",
    "into", "itself", "just", "know", "last", "like", "liked", "likes", "love", "loved", "loves",
    "made", "make", "many", "more", "most", "much", "must", "myself", "near", "never", "none",
    "only", "other", "ours", "ourselves", "over", "person", "really", "same", "should", "since",
    "some", "something", "still", "such", "sure", "take", "than", "thank", "thanks", "that",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "thing", "things",
    "this", "those", "through", "under", "until", "upon", "user", "very", "want", "well", "were",
    "what", "when", "where", "which", "while", "will", "with", "within", "without", "would",
    "your", "yours", "yourself",
];

/// Lower-cased alphanumeric tokens in order of appearance.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// A content word is a token of at least four characters that is not a stopword.
pub fn is_content_word(word: &str) -> bool {
    word.chars().count() >= 4 && !is_stopword(word)
}

/// Content words in order of first appearance, without repeats.
pub fn content_words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    words(text)
        .into_iter()
        .filter(|w| is_content_word(w))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

pub fn content_word_set(text: &str) -> BTreeSet<String> {
    words(text).into_iter().filter(|w| is_content_word(w)).collect()
}

/// True when `a` and `b` share at least one content word.
pub fn shares_content_word(a: &str, b: &str) -> bool {
    let left = content_word_set(a);
    words(b).iter().any(|w| left.contains(w))
}

/// Splits text into sentences on `.`, `!` or `?` followed by whitespace or end of text.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(n) => n.is_whitespace(),
            };
            if boundary {
                let s = current.trim();
                if s.chars().any(|c| c.is_alphanumeric()) {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let s = current.trim();
    if s.chars().any(|c| c.is_alphanumeric()) {
        out.push(s.to_string());
    }
    out
}

/// Truncates to at most `max_bytes`, backing off to a char boundary.
pub fn truncate_bytes(text: &str, max_bytes: usize) -> &str {
    if text.len() <= max_bytes {
        return text;
    }
    let mut end = max_bytes;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Normalized Levenshtein similarity in `[0, 1]` after whitespace/case folding.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let fold = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    strsim::normalized_levenshtein(&fold(a), &fold(b))
}

/// Turns a third-person verb ("enjoys", "studies", "watches") into its base form.
pub fn verb_base_form(verb: &str) -> String {
    let lower = verb.to_lowercase();
    match lower.as_str() {
        "is" => return "be".into(),
        "has" => return "have".into(),
        "does" => return "do".into(),
        "goes" => return "go".into(),
        _ => {}
    }
    if lower.len() > 3 && lower.ends_with("ies") {
        return format!("{}y", &lower[..lower.len() - 3]);
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes", "oes"] {
        if lower.ends_with(suffix) {
            return lower[..lower.len() - 2].to_string();
        }
    }
    if lower.ends_with('s') && !lower.ends_with("ss") && lower.len() > 2 {
        return lower[..lower.len() - 1].to_string();
    }
    lower
}
