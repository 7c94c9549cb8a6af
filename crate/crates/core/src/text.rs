//! Text normalization shared by embedding, keyword extraction and metrics.
//!
//! Every component that compares text goes through [`normalize`], so the
//! rules live in exactly one place:
//!
//! 1. case-fold (Unicode lower-casing),
//! 2. map every character in a Unicode punctuation category (`Pc`, `Pd`,
//!    `Ps`, `Pe`, `Pi`, `Pf`, `Po`) to a space,
//! 3. collapse whitespace runs to a single space and trim.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use unicode_general_category::{get_general_category, GeneralCategory};

/// Returns true when `c` belongs to one of the Unicode punctuation categories.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return matches!(
            c,
            '!' | '"' | '#' | '%' | '&' | '\'' | '(' | ')' | '*' | ',' | '-' | '.' | '/' | ':' | ';' | '?' | '@' | '['
                | '\\' | ']' | '_' | '{' | '}'
        );
    }
    is_unicode_punctuation(c)
}

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

pub fn normalize(text: &str) -> String {
    let mut folded = String::with_capacity(text.len());
    for c in text.chars() {
        if is_punctuation(c) {
            folded.push(' ');
        } else {
            folded.extend(c.to_lowercase());
        }
    }
    collapse_whitespace(&folded)
}

/// Trims and collapses internal whitespace runs to one ASCII space.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits already-normalized text on whitespace.
pub fn tokens(normalized: &str) -> Vec<&str> {
    normalized.split_whitespace().collect()
}

/// A token multiset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    counts: BTreeMap<String, usize>,
    len: usize,
}

impl TokenBag {
    pub fn from_normalized(normalized: &str) -> Self {
        let mut bag = TokenBag::default();
        for tok in normalized.split_whitespace() {
            *bag.counts.entry(tok.to_string()).or_insert(0) += 1;
            bag.len += 1;
        }
        bag
    }

    /// Total number of tokens, multiplicities included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self, token: &str) -> usize {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Size of the multiset intersection, `sum_w min(c_w(self), c_w(other))`.
    pub fn overlap(&self, other: &TokenBag) -> usize {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(tok, c)| (*c).min(large.count(tok)))
            .sum()
    }
}

/// Built-in English stopword list used by deterministic keyword extraction.
///
/// Kept deliberately free of domain words ("students", "numbers", "help") so
/// that teacher queries keep their content terms.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
    "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
    "between", "both", "but", "by", "can", "could", "did", "do", "does", "doing",
    "down", "during", "each", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "might", "more", "most", "must", "my", "myself", "no", "nor", "not", "now",
    "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "same", "shall", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very",
    "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

pub fn default_stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().map(|s| s.to_string()).collect())
}
