//! Punctuation and casing restoration for the lowercase recognizer stream.
//!
//! Each token is labelled independently from a fixed window of neighbours,
//! so once the tokens in a window are stable its label never changes. Text
//! derived from tokens with index below `stable_prefix - window_after` is
//! therefore stable too, which is what the sentence statuses report.

mod count_model;
mod truecase;

use std::fmt;
use std::sync::Arc;

pub use count_model::{train_count_model, CountModel, MODEL_HEADER};
pub use truecase::{truecase, TruecaseModel};

use crate::text::{split_sentence_spans, NonbreakingPrefixes};
use crate::types::{HypothesisUpdate, Sentence, SentenceStatus};

pub const DEFAULT_WINDOW_BEFORE: usize = 4;
pub const DEFAULT_WINDOW_AFTER: usize = 2;

/// Punctuation inserted after a token. Exclamation marks are folded into
/// [`PunctMark::Period`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PunctMark {
    #[default]
    None,
    Comma,
    Period,
    Question,
}

impl PunctMark {
    pub const ALL: [PunctMark; 4] = [
        PunctMark::None,
        PunctMark::Comma,
        PunctMark::Period,
        PunctMark::Question,
    ];

    pub fn as_char(self) -> Option<char> {
        match self {
            PunctMark::None => None,
            PunctMark::Comma => Some(','),
            PunctMark::Period => Some('.'),
            PunctMark::Question => Some('?'),
        }
    }

    pub fn from_char(c: char) -> Option<PunctMark> {
        match c {
            ',' => Some(PunctMark::Comma),
            '.' | '!' => Some(PunctMark::Period),
            '?' => Some(PunctMark::Question),
            _ => None,
        }
    }

    pub fn ends_sentence(self) -> bool {
        matches!(self, PunctMark::Period | PunctMark::Question)
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenLabel {
    pub punct_after: PunctMark,
    pub capitalize: bool,
    /// Disfluency: the token is removed from the output.
    pub drop: bool,
}

/// Unnormalized scores for each label dimension, indexed like
/// [`PunctMark::ALL`], `[lowercase, capitalize]` and `[keep, drop]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabelScores {
    pub punct: [f64; 4],
    pub capitalize: [f64; 2],
    pub drop: [f64; 2],
}

fn argmax<const N: usize>(xs: &[f64; N]) -> usize {
    let mut best = 0;
    for i in 1..N {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

impl LabelScores {
    /// Highest-scoring label; ties go to none, lowercase and keep.
    pub fn decide(&self) -> TokenLabel {
        let drop = argmax(&self.drop) == 1;
        TokenLabel {
            punct_after: if drop {
                PunctMark::None
            } else {
                PunctMark::ALL[argmax(&self.punct)]
            },
            capitalize: argmax(&self.capitalize) == 1,
            drop,
        }
    }

    pub fn punct_score(&self, mark: PunctMark) -> f64 {
        self.punct[mark.index()]
    }
}

/// Maps a window of lowercase tokens and the centre position to label scores.
pub trait WindowScorer: Send + Sync {
    fn score(&self, window: &[&str], center: usize) -> LabelScores;
}

impl<F> WindowScorer for F
where
    F: Fn(&[&str], usize) -> LabelScores + Send + Sync,
{
    fn score(&self, window: &[&str], center: usize) -> LabelScores {
        self(window, center)
    }
}

/// A sliding-window token classifier.
#[derive(Clone)]
pub struct WindowModel {
    pub window_before: usize,
    pub window_after: usize,
    scorer: Arc<dyn WindowScorer>,
}

impl fmt::Debug for WindowModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WindowModel")
            .field("window_before", &self.window_before)
            .field("window_after", &self.window_after)
            .finish_non_exhaustive()
    }
}

impl WindowModel {
    pub fn new(window_before: usize, window_after: usize, scorer: Arc<dyn WindowScorer>) -> Self {
        WindowModel {
            window_before,
            window_after,
            scorer,
        }
    }

    /// Label of `tokens[i]`, reading only `tokens[i - before ..= i + after]`.
    pub fn label(&self, tokens: &[&str], i: usize) -> TokenLabel {
        let start = i.saturating_sub(self.window_before);
        let end = (i + self.window_after + 1).min(tokens.len());
        self.scorer.score(&tokens[start..end], i - start).decide()
    }

    pub fn labels(&self, tokens: &[&str]) -> Vec<TokenLabel> {
        (0..tokens.len()).map(|i| self.label(tokens, i)).collect()
    }
}

/// Punctuated text plus how much of it can no longer change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Punctuated {
    pub text: String,
    /// Byte length of the prefix of `text` that later updates repeat verbatim.
    pub stable_chars: usize,
    pub sentences: Vec<Sentence>,
}

/// Window model plus the language-dependent parts of punctuation.
#[derive(Debug, Clone)]
pub struct Punctuator {
    pub model: WindowModel,
    pub truecaser: Option<Arc<TruecaseModel>>,
    prefixes: NonbreakingPrefixes,
}

impl Punctuator {
    pub fn new(model: WindowModel, language: &str) -> Self {
        Punctuator {
            model,
            truecaser: None,
            prefixes: NonbreakingPrefixes::for_language(language),
        }
    }

    pub fn with_truecaser(mut self, truecaser: TruecaseModel) -> Self {
        self.truecaser = Some(Arc::new(truecaser));
        self
    }

    /// Punctuates one update. With `is_final` the stream has ended, so every
    /// token's window is complete and the whole text is stable.
    pub fn run(&self, update: &HypothesisUpdate, is_final: bool) -> Punctuated {
        let words: Vec<String> = update
            .tokens
            .iter()
            .map(|t| t.text.to_lowercase())
            .collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let labels = self.model.labels(&refs);
        let stable_tokens = if is_final {
            words.len()
        } else {
            update
                .stable_prefix
                .min(words.len())
                .saturating_sub(self.model.window_after)
        };

        // Surface forms of the kept tokens, remembering which are stable.
        let mut surfaces = Vec::with_capacity(words.len());
        let mut stable_kept = 0;
        let mut sentence_start = true;
        for (i, (word, label)) in words.iter().zip(&labels).enumerate() {
            if label.drop {
                continue;
            }
            let mut surface = if sentence_start || label.capitalize {
                capitalize_first(word)
            } else {
                word.clone()
            };
            if let Some(c) = label.punct_after.as_char() {
                surface.push(c);
            }
            sentence_start = label.punct_after.ends_sentence();
            surfaces.push(surface);
            if i < stable_tokens {
                stable_kept = surfaces.len();
            }
        }
        if let Some(tc) = &self.truecaser {
            surfaces = tc.recase_words(&surfaces);
        }

        let mut text = String::new();
        let mut stable_chars = 0;
        for (k, surface) in surfaces.iter().enumerate() {
            if k > 0 {
                text.push(' ');
            }
            text.push_str(surface);
            if k < stable_kept {
                stable_chars = text.len();
            }
        }

        let sentences = sentence_statuses(&text, stable_chars, is_final, &self.prefixes);

        Punctuated {
            text,
            stable_chars,
            sentences,
        }
    }
}

/// Punctuates a non-final update with English sentence splitting.
pub fn punctuate(update: &HypothesisUpdate, model: &WindowModel) -> Punctuated {
    Punctuator::new(model.clone(), "en").run(update, false)
}

pub(crate) fn capitalize_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Derives sentence statuses for punctuated text whose first `stable_chars`
/// bytes are stable. A sentence is stable once the next sentence starts
/// inside the stable region, which confirms its end; the last sentence only
/// when the stream is `complete`. An unstable tail cannot confirm anything:
/// it may still vanish and let a later word merge into the sentence.
pub fn sentence_statuses(
    text: &str,
    stable_chars: usize,
    complete: bool,
    prefixes: &NonbreakingPrefixes,
) -> Vec<Sentence> {
    let spans = split_sentence_spans(text, prefixes);
    let next_starts: Vec<Option<usize>> = spans
        .iter()
        .skip(1)
        .map(|&(start, _)| Some(start))
        .chain([None])
        .collect();
    spans
        .into_iter()
        .zip(next_starts)
        .enumerate()
        .map(|(index, ((start, end), next))| {
            let body = &text[start..end];
            let confirmed = match next {
                Some(next_start) => next_start < stable_chars,
                None => complete,
            };
            let status = if end <= stable_chars && confirmed {
                SentenceStatus::Stable
            } else if crate::types::ends_with_terminal(body) {
                SentenceStatus::Completed
            } else {
                SentenceStatus::Incomplete
            };
            Sentence::new(index, body, status)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Token;

    fn update(words: &[&str], stable: usize) -> HypothesisUpdate {
        HypothesisUpdate {
            session_id: "s".into(),
            seq: 1,
            tokens: words.iter().map(|w| Token::new(*w).unwrap()).collect(),
            stable_prefix: stable,
            emitted_at_ms: 0,
        }
    }

    fn forced_period_after(target: &'static str) -> WindowModel {
        WindowModel::new(
            1,
            1,
            Arc::new(move |window: &[&str], center: usize| {
                let mut s = LabelScores::default();
                if window[center] == target {
                    s.punct[PunctMark::Period.index()] = 1.0;
                }
                s
            }),
        )
    }

    #[test]
    fn forced_scorer() {
        let model = forced_period_after("world");
        let p = Punctuator::new(model, "en").run(&update(&["hello", "world"], 2), true);
        assert_eq!(p.text, "Hello world.");
        assert_eq!(p.sentences.len(), 1);
        assert_eq!(p.sentences[0].status, SentenceStatus::Stable);

        let p = punctuate(
            &update(&["Hello", "world"], 0),
            &forced_period_after("world"),
        );
        assert_eq!(p.text, "Hello world.");
        assert_eq!(p.stable_chars, 0);
        assert_eq!(p.sentences[0].status, SentenceStatus::Completed);
    }

    #[test]
    fn deterministic() {
        let model = forced_period_after("b");
        let u = update(&["a", "b", "c", "d"], 3);
        assert_eq!(punctuate(&u, &model), punctuate(&u, &model));
    }

    #[test]
    fn stable_region_and_statuses() {
        let model = forced_period_after("b");
        // window_after = 1, stable_prefix = 4 -> tokens 0..=2 are label-stable.
        let p = punctuate(&update(&["a", "b", "c", "d", "e"], 4), &model);
        assert_eq!(p.text, "A b. C d e");
        assert_eq!(&p.text[..p.stable_chars], "A b. C");
        let statuses: Vec<SentenceStatus> = p.sentences.iter().map(|s| s.status).collect();
        assert_eq!(
            statuses,
            vec![SentenceStatus::Stable, SentenceStatus::Incomplete]
        );
    }

    #[test]
    fn drop_label_removes_token() {
        let model = WindowModel::new(
            0,
            0,
            Arc::new(|window: &[&str], center: usize| {
                let mut s = LabelScores::default();
                if window[center] == "uh" {
                    s.drop = [0.0, 1.0];
                    s.punct[PunctMark::Comma.index()] = 5.0;
                }
                s
            }),
        );
        let p = punctuate(&update(&["so", "uh", "we", "go"], 4), &model);
        assert_eq!(p.text, "So we go");
        assert_eq!(model.label(&["uh"], 0).punct_after, PunctMark::None);
    }

    #[test]
    fn window_reads_only_neighbourhood() {
        let model = WindowModel::new(
            1,
            2,
            Arc::new(|window: &[&str], center: usize| {
                let mut s = LabelScores::default();
                s.punct[PunctMark::Comma.index()] = window.len() as f64 + center as f64 * 0.5;
                s.punct[PunctMark::None.index()] = 3.9;
                s
            }),
        );
        // i=0: window [0..=2] len 3, center 0 -> 3.0 < 3.9 -> none
        // i=3: window [2..=5] len 4, center 1 -> 4.5 -> comma
        let toks = ["a", "b", "c", "d", "e", "f"];
        assert_eq!(model.label(&toks, 0).punct_after, PunctMark::None);
        assert_eq!(model.label(&toks, 3).punct_after, PunctMark::Comma);
    }

    #[test]
    fn ties_prefer_none_lowercase_keep() {
        let s = LabelScores {
            punct: [1.0, 1.0, 1.0, 1.0],
            capitalize: [2.0, 2.0],
            drop: [0.0, 0.0],
        };
        assert_eq!(s.decide(), TokenLabel::default());
    }

    #[test]
    fn statuses_from_text() {
        let p = NonbreakingPrefixes::for_language("en");
        let s = sentence_statuses("Hi there. How are", 13, false, &p);
        assert_eq!(s[0].status, SentenceStatus::Stable);
        assert_eq!(s[1].status, SentenceStatus::Incomplete);
        // An unstable next word does not confirm the end yet.
        let s = sentence_statuses("Hi there. How are", 9, false, &p);
        assert_eq!(s[0].status, SentenceStatus::Completed);
        let s = sentence_statuses("Hi there. Bye.", 0, false, &p);
        assert_eq!(s[1].status, SentenceStatus::Completed);
        // The last sentence could still absorb a following word.
        let s = sentence_statuses("Ask Dr.", 7, false, &p);
        assert_eq!(s[0].status, SentenceStatus::Completed);
        let s = sentence_statuses("Ask Dr.", 7, true, &p);
        assert_eq!(s[0].status, SentenceStatus::Stable);
    }

    fn hashing_model(wb: usize, wa: usize) -> WindowModel {
        use std::hash::{Hash, Hasher};
        WindowModel::new(
            wb,
            wa,
            Arc::new(|window: &[&str], center: usize| {
                let mut h = std::collections::hash_map::DefaultHasher::new();
                (window, center).hash(&mut h);
                let x = h.finish();
                let mut s = LabelScores::default();
                s.punct[(x % 4) as usize] = 1.0;
                s.capitalize[((x >> 8) % 2) as usize] = 1.0;
                s.drop[usize::from((x >> 16).is_multiple_of(7))] = 1.0;
                s
            }),
        )
    }

    /// A random stream: a growing token list whose first `stable` tokens are
    /// frozen while the tail keeps being rewritten.
    fn stream(words: &[u8], steps: &[(u8, u8)]) -> Vec<HypothesisUpdate> {
        let vocab = ["a", "b", "c", "dr", "e"];
        let mut tokens: Vec<String> = Vec::new();
        let mut stable = 0;
        let mut out = Vec::new();
        for (seq, &(grow, freeze)) in steps.iter().enumerate() {
            for (k, w) in tokens.iter_mut().enumerate().skip(stable) {
                *w = vocab[(words[(k + seq) % words.len()] as usize + seq) % vocab.len()]
                    .to_string();
            }
            for _ in 0..grow % 4 {
                tokens.push(
                    vocab[words[tokens.len() % words.len()] as usize % vocab.len()].to_string(),
                );
            }
            stable = (stable + freeze as usize % 3).min(tokens.len());
            out.push(HypothesisUpdate {
                session_id: "s".into(),
                seq: seq as u64 + 1,
                tokens: tokens
                    .iter()
                    .map(|w| Token::new(w.as_str()).unwrap())
                    .collect(),
                stable_prefix: stable,
                emitted_at_ms: 0,
            });
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn stable_text_survives_later_updates(
            words in proptest::collection::vec(0u8..5, 1..20),
            steps in proptest::collection::vec((0u8..8, 0u8..8), 1..25),
            wb in 0usize..5,
            wa in 0usize..3,
        ) {
            let model = hashing_model(wb, wa);
            let updates = stream(&words, &steps);
            proptest::prop_assert!(crate::stream::StreamValidator::check_all(&updates).is_ok());
            let outs: Vec<Punctuated> = updates.iter().map(|u| punctuate(u, &model)).collect();
            for pair in outs.windows(2) {
                let stable = &pair[0].text[..pair[0].stable_chars];
                proptest::prop_assert!(pair[1].text.starts_with(stable));
                proptest::prop_assert!(pair[1].stable_chars >= pair[0].stable_chars);
                for s in pair[0].sentences.iter().filter(|s| s.status == SentenceStatus::Stable) {
                    proptest::prop_assert_eq!(&pair[1].sentences[s.index], s);
                }
            }
        }

        #[test]
        fn dropping_keeps_order(words in proptest::collection::vec(0u8..5, 1..30)) {
            let vocab = ["a", "b", "c", "d", "e"];
            let toks: Vec<&str> = words.iter().map(|&w| vocab[w as usize]).collect();
            let model = hashing_model(2, 1);
            let labels = model.labels(&toks);
            let kept: Vec<&str> = toks.iter().zip(&labels).filter(|(_, l)| !l.drop).map(|(t, _)| *t).collect();
            let u = update(&toks, toks.len());
            let out = Punctuator::new(model, "en").run(&u, true);
            let got: Vec<String> = out.text.split_whitespace()
                .map(|w| w.trim_end_matches([',', '.', '?']).to_lowercase())
                .collect();
            proptest::prop_assert_eq!(got, kept);
        }
    }
}
