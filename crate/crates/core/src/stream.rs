use thiserror::Error;

use crate::types::{HypothesisUpdate, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamViolation {
    #[error("seq {got} does not increase past {previous}")]
    SeqNotIncreasing { previous: u64, got: u64 },
    #[error("stable prefix {stable_prefix} exceeds {tokens} tokens")]
    PrefixExceedsTokens { stable_prefix: usize, tokens: usize },
    #[error("stable prefix shrank from {previous} to {got}")]
    PrefixDecreased { previous: usize, got: usize },
    #[error("stable token {index} changed")]
    StableTokenChanged { index: usize },
    #[error("update belongs to session {got}, expected {expected}")]
    WrongSession { expected: String, got: String },
}

/// Checks the self-updating stream contract across consecutive updates of
/// one session.
#[derive(Debug, Default)]
pub struct StreamValidator {
    session: Option<String>,
    last_seq: Option<u64>,
    stable: Vec<Token>,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, update: &HypothesisUpdate) -> Result<(), StreamViolation> {
        match &self.session {
            Some(expected) if *expected != update.session_id => {
                return Err(StreamViolation::WrongSession {
                    expected: expected.clone(),
                    got: update.session_id.clone(),
                })
            }
            _ => {}
        }
        if let Some(previous) = self.last_seq {
            if update.seq <= previous {
                return Err(StreamViolation::SeqNotIncreasing {
                    previous,
                    got: update.seq,
                });
            }
        }
        if update.stable_prefix > update.tokens.len() {
            return Err(StreamViolation::PrefixExceedsTokens {
                stable_prefix: update.stable_prefix,
                tokens: update.tokens.len(),
            });
        }
        if update.stable_prefix < self.stable.len() {
            return Err(StreamViolation::PrefixDecreased {
                previous: self.stable.len(),
                got: update.stable_prefix,
            });
        }
        if let Some(index) = self
            .stable
            .iter()
            .zip(&update.tokens)
            .position(|(old, new)| old.text != new.text)
        {
            return Err(StreamViolation::StableTokenChanged { index });
        }
        self.session = Some(update.session_id.clone());
        self.last_seq = Some(update.seq);
        self.stable = update.tokens[..update.stable_prefix].to_vec();
        Ok(())
    }

    /// Validates a whole stream, returning the index of the first bad update.
    pub fn check_all<'a>(
        updates: impl IntoIterator<Item = &'a HypothesisUpdate>,
    ) -> Result<(), (usize, StreamViolation)> {
        let mut validator = StreamValidator::new();
        for (i, update) in updates.into_iter().enumerate() {
            validator.check(update).map_err(|e| (i, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(seq: u64, text: &str, stable: usize) -> HypothesisUpdate {
        HypothesisUpdate::from_text("s", seq, text, stable, seq * 100)
    }

    #[test]
    fn accepts_growing_stream() {
        let stream = [
            upd(1, "a", 0),
            upd(2, "a b", 1),
            upd(3, "a c d", 1),
            upd(4, "a c d", 3),
        ];
        assert!(StreamValidator::check_all(&stream).is_ok());
    }

    #[test]
    fn rejects_violations() {
        let e = StreamValidator::check_all(&[upd(2, "a", 0), upd(2, "a", 0)]).unwrap_err();
        assert_eq!(e.0, 1);
        assert!(matches!(e.1, StreamViolation::SeqNotIncreasing { .. }));

        let e = StreamValidator::check_all(&[upd(1, "a b", 2), upd(2, "a b", 1)]).unwrap_err();
        assert!(matches!(e.1, StreamViolation::PrefixDecreased { .. }));

        let e = StreamValidator::check_all(&[upd(1, "a b", 2), upd(2, "a x", 2)]).unwrap_err();
        assert_eq!(e.1, StreamViolation::StableTokenChanged { index: 1 });

        let mut bad = upd(1, "a", 0);
        bad.stable_prefix = 3;
        assert!(matches!(
            StreamValidator::new().check(&bad),
            Err(StreamViolation::PrefixExceedsTokens { .. })
        ));
    }
}
