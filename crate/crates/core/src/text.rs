//! Shared tokenization helpers.
//!
//! Two tokenizers live here. Retrieval (chunking statistics, BM25, the
//! built-in rerankers) uses [`retrieval_tokens`]: lowercase whitespace
//! splitting with leading and trailing punctuation stripped. Answer scoring
//! uses [`normalize_answer`], which removes punctuation everywhere and
//! collapses whitespace.

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
/// Tokens that are pure punctuation disappear.
pub fn retrieval_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Lowercase, drop every punctuation character, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits text into sentences on line breaks and on `.`, `!`, `?` followed
/// by whitespace. Empty pieces are dropped; pieces are trimmed.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current = String::new();
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
        let s = current.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

/// A small fixed list of common English function words.
pub const STOPWORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "at", "by", "for", "with", "about", "to",
    "from", "in", "on", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had",
    "do", "does", "did", "what", "which", "who", "whom", "this", "that", "these", "those", "it",
    "its", "as", "not", "no", "so", "than", "too", "very", "can", "will", "how",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Stable 64-bit FNV-1a hash. Used wherever a process-independent hash is
/// required (hash embeddings, noise keys).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
