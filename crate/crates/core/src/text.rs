//! Tokenization, WER normalization and rule-based sentence splitting.

use std::collections::HashSet;
use std::path::Path;

use crate::error::Result;

/// Marks removed from token edges before scoring WER.
const WER_STRIP: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Lowercases, splits on whitespace and strips `. , ? ! ; :` from token edges.
///
/// Tokens that consist only of those marks disappear; marks inside a token
/// (`3.5`, `e.g`) and any other symbol are kept.
pub fn normalize_for_wer(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(WER_STRIP).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Prefixes after which a period does not end a sentence.
#[derive(Debug, Clone, Default)]
pub struct NonbreakingPrefixes {
    always: HashSet<String>,
    numeric_only: HashSet<String>,
}

impl NonbreakingPrefixes {
    /// Parses the one-prefix-per-line format; `#` starts a comment and a
    /// trailing `#NUMERIC_ONLY#` restricts the entry to numeric followers.
    pub fn parse(data: &str) -> Self {
        let mut prefixes = NonbreakingPrefixes::default();
        for line in data.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(idx) = line.find("#NUMERIC_ONLY#") {
                let prefix = line[..idx].trim();
                if !prefix.is_empty() {
                    prefixes.numeric_only.insert(prefix.to_string());
                }
                continue;
            }
            let prefix = match line.find('#') {
                Some(idx) => line[..idx].trim(),
                None => line,
            };
            if !prefix.is_empty() {
                prefixes.always.insert(prefix.to_string());
            }
        }
        prefixes
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// Built-in list for `language`; unknown languages get an empty list.
    pub fn for_language(language: &str) -> Self {
        match language {
            "en" => Self::parse(include_str!("../data/nonbreaking_prefix.en")),
            "de" => Self::parse(include_str!("../data/nonbreaking_prefix.de")),
            "cs" => Self::parse(include_str!("../data/nonbreaking_prefix.cs")),
            _ => Self::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.always.is_empty() && self.numeric_only.is_empty()
    }

    fn blocks_split(&self, prefix: &str, next_word: &str) -> bool {
        if self.always.contains(prefix) {
            return true;
        }
        self.numeric_only.contains(prefix) && next_word.starts_with(|c: char| c.is_ascii_digit())
    }
}

/// Splits punctuated, cased text into sentences using the built-in
/// nonbreaking prefixes for `language`.
pub fn split_sentences(text: &str, language: &str) -> Vec<String> {
    split_sentences_with(text, &NonbreakingPrefixes::for_language(language))
}

pub fn split_sentences_with(text: &str, prefixes: &NonbreakingPrefixes) -> Vec<String> {
    split_sentence_spans(text, prefixes)
        .into_iter()
        .map(|(start, end)| text[start..end].to_string())
        .collect()
}

/// Byte spans `(start, end)` of each sentence in `text`, trimmed of
/// surrounding whitespace.
pub fn split_sentence_spans(text: &str, prefixes: &NonbreakingPrefixes) -> Vec<(usize, usize)> {
    let words = word_spans(text);
    let mut spans = Vec::new();
    let Some(&(first_start, _)) = words.first() else {
        return spans;
    };
    let mut start = first_start;
    for pair in words.windows(2) {
        let (ws, we) = pair[0];
        let (ns, ne) = pair[1];
        if breaks_after(&text[ws..we], &text[ns..ne], prefixes) {
            spans.push((start, we));
            start = ns;
        }
    }
    let (_, last_end) = words[words.len() - 1];
    spans.push((start, last_end));
    spans
}

fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn breaks_after(word: &str, next: &str, prefixes: &NonbreakingPrefixes) -> bool {
    let Some(last) = word.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '?' | '!') {
        return false;
    }
    if !next.chars().next().is_some_and(char::is_uppercase) {
        return false;
    }
    if last != '.' {
        return true;
    }
    let prefix = word.trim_end_matches('.');
    if prefix.is_empty() {
        return true;
    }
    // Acronyms with internal periods ("e.g.", "z.B.") never end a sentence.
    if prefix.contains('.') && prefix.chars().any(char::is_alphabetic) {
        return false;
    }
    !prefixes.blocks_split(prefix, next)
}
