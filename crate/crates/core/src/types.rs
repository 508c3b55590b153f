//! Values shared by every stage of the cascade.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// One recognized word, optionally carrying its position in the audio.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        validate_token_text(&text)?;
        Ok(Token {
            text,
            start_ms: None,
            end_ms: None,
        })
    }

    pub fn timed(text: impl Into<String>, start_ms: u64, end_ms: u64) -> Result<Self> {
        let text = text.into();
        validate_token_text(&text)?;
        if start_ms > end_ms {
            return Err(Error::InvalidToken(format!(
                "{text}: start {start_ms} > end {end_ms}"
            )));
        }
        Ok(Token {
            text,
            start_ms: Some(start_ms),
            end_ms: Some(end_ms),
        })
    }
}

fn validate_token_text(text: &str) -> Result<()> {
    if text.is_empty() || text.chars().any(char::is_whitespace) {
        return Err(Error::InvalidToken(text.to_string()));
    }
    Ok(())
}

/// One emission of a self-updating recognizer.
///
/// `tokens[..stable_prefix]` is guaranteed to be repeated verbatim by every
/// later update of the same session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisUpdate {
    pub session_id: String,
    pub seq: u64,
    pub tokens: Vec<Token>,
    pub stable_prefix: usize,
    pub emitted_at_ms: u64,
}

impl HypothesisUpdate {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn text(&self) -> String {
        self.words().collect::<Vec<_>>().join(" ")
    }

    /// Rebuilds an update from a whitespace-separated word string, as carried on the wire.
    pub fn from_text(
        session_id: impl Into<String>,
        seq: u64,
        text: &str,
        stable_prefix: usize,
        emitted_at_ms: u64,
    ) -> Self {
        let tokens: Vec<Token> = text
            .split_whitespace()
            .map(|w| Token {
                text: w.to_string(),
                start_ms: None,
                end_ms: None,
            })
            .collect();
        let stable_prefix = stable_prefix.min(tokens.len());
        HypothesisUpdate {
            session_id: session_id.into(),
            seq,
            tokens,
            stable_prefix,
            emitted_at_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SentenceStatus {
    Incomplete,
    Completed,
    Stable,
}

impl SentenceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SentenceStatus::Incomplete => "incomplete",
            SentenceStatus::Completed => "completed",
            SentenceStatus::Stable => "stable",
        }
    }
}

impl fmt::Display for SentenceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub status: SentenceStatus,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>, status: SentenceStatus) -> Self {
        Sentence {
            index,
            text: text.into(),
            status,
        }
    }

    pub fn ends_with_terminal(&self) -> bool {
        ends_with_terminal(&self.text)
    }
}

pub(crate) fn ends_with_terminal(text: &str) -> bool {
    matches!(text.trim_end().chars().last(), Some('.' | '?' | '!'))
}

/// A development document: the recognizer input plus gold references.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub domain: String,
    pub source_lang: String,
    /// Time-stamped gold tokens, the simulated recognizer's ground truth.
    pub transcript: Vec<Token>,
    pub reference_transcript: Vec<Sentence>,
    /// Language -> independent references, each a list of sentences.
    pub reference_translations: BTreeMap<String, Vec<Vec<String>>>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.transcript.len()
    }

    pub fn duration_ms(&self) -> u64 {
        self.transcript
            .iter()
            .filter_map(|t| t.end_ms)
            .max()
            .unwrap_or(0)
    }

    pub fn reference_sentences(&self) -> Vec<String> {
        self.reference_transcript
            .iter()
            .map(|s| s.text.clone())
            .collect()
    }
}
