//! Rule-based normalization used for notion matching.
//!
//! The pipeline is fixed so that two implementations agree bit for bit:
//! lowercase, turn every non-alphanumeric character into a space, split on
//! whitespace, then strip suffixes from words longer than three characters
//! until no rule applies.
//!
//! Suffix rules, longest first:
//!
//! | suffix | replacement | condition                                  |
//! |--------|-------------|--------------------------------------------|
//! | `ies`  | `y`         |                                            |
//! | `ing`  |             |                                            |
//! | `es`   |             | preceded by `s`, `x`, `z`, `ch` or `sh`    |
//! | `ed`   |             |                                            |
//! | `s`    |             | not preceded by `s`, `u` or `i`            |
//!
//! A rule never leaves a word shorter than three characters. Iterating to a
//! fixpoint makes the whole pipeline idempotent.

use crate::error::{MasaError, Result};

const MIN_RESULT: usize = 3;

fn ends_with_sibilant(stem: &[char]) -> bool {
    matches!(stem, [.., 's' | 'x' | 'z'] | [.., 'c' | 's', 'h'])
}

fn strip_once(word: &[char]) -> Option<Vec<char>> {
    if word.len() <= 3 {
        return None;
    }
    let n = word.len();
    let try_rule = |suffix: &str, replacement: &str, ok: &dyn Fn(&[char]) -> bool| -> Option<Vec<char>> {
        let s: Vec<char> = suffix.chars().collect();
        if n < s.len() || word[n - s.len()..] != s[..] {
            return None;
        }
        let stem = &word[..n - s.len()];
        if !ok(stem) {
            return None;
        }
        let mut out = stem.to_vec();
        out.extend(replacement.chars());
        (out.len() >= MIN_RESULT).then_some(out)
    };
    try_rule("ies", "y", &|_| true)
        .or_else(|| try_rule("ing", "", &|_| true))
        .or_else(|| try_rule("es", "", &ends_with_sibilant))
        .or_else(|| try_rule("ed", "", &|_| true))
        .or_else(|| try_rule("s", "", &|stem| !matches!(stem.last(), Some('s' | 'u' | 'i'))))
}

/// Lemma of a single lowercase word.
pub fn lemmatize_word(word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    while let Some(next) = strip_once(&chars) {
        chars = next;
    }
    chars.into_iter().collect()
}

/// Normalized word sequence of `text`.
pub fn lemmatize_words(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(lemmatize_word).collect()
}

/// Normalized text: lemmatized words joined by single spaces.
pub fn lemmatize(text: &str) -> String {
    lemmatize_words(text).join(" ")
}

/// Pre-lemmatized text for repeated phrase lookups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmatizedText {
    words: Vec<String>,
}

impl LemmatizedText {
    pub fn new(text: &str) -> Self {
        Self {
            words: lemmatize_words(text),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// True iff `phrase` (already lemmatized) occurs as a contiguous run of words.
    pub fn contains_phrase(&self, phrase: &[String]) -> bool {
        if phrase.is_empty() || phrase.len() > self.words.len() {
            return false;
        }
        self.words.windows(phrase.len()).any(|w| w == phrase)
    }
}

/// Word-boundary phrase match after lemmatizing both sides.
pub fn notion_in_text(notion: &str, text: &str) -> Result<bool> {
    let phrase = lemmatize_words(notion);
    if phrase.is_empty() {
        return Err(MasaError::Precondition("notion must be non-empty".into()));
    }
    Ok(LemmatizedText::new(text).contains_phrase(&phrase))
}
