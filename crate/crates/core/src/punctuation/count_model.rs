//! Frequency-table punctuation baseline.
//!
//! For every training position the model counts the following punctuation
//! mark and whether the token was capitalized mid-sentence, keyed by the
//! centre token plus a context window. Prediction backs off from the full
//! window to narrower contexts until a key has observations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{LabelScores, PunctMark, WindowModel, WindowScorer};
use crate::error::{Error, Result};

pub const MODEL_HEADER: &str = "punctmodel v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    punct: [u32; 4],
    /// `[lowercase, capitalized]`, counted only for non-initial tokens.
    case: [u32; 2],
}

/// Count-based [`WindowScorer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountModel {
    pub window_before: usize,
    pub window_after: usize,
    levels: Vec<(usize, usize)>,
    table: HashMap<String, Counts>,
}

fn backoff_levels(wb: usize, wa: usize) -> Vec<(usize, usize)> {
    let mut levels = Vec::new();
    for level in [(wb, wa), (wb.min(1), wa.min(1)), (0, wa.min(1)), (0, 0)] {
        if !levels.contains(&level) {
            levels.push(level);
        }
    }
    levels
}

fn context_key(level: usize, (b, a): (usize, usize), window: &[&str], center: usize) -> String {
    let before = window[center.saturating_sub(b)..center].join(" ");
    let after = window[center + 1..(center + 1 + a).min(window.len())].join(" ");
    format!("{level}\t{before}\t{}\t{after}", window[center])
}

/// One training token: lowercase core, following mark, and whether it was
/// capitalized (`None` at sentence starts, where casing carries no signal).
struct Observation {
    word: String,
    mark: PunctMark,
    capitalized: Option<bool>,
}

fn trim_to_core(raw: &str) -> &str {
    raw.trim_matches(|c: char| !c.is_alphanumeric())
}

fn observations(corpus: &[impl AsRef<str>]) -> Vec<Observation> {
    let mut out: Vec<Observation> = Vec::new();
    for sentence in corpus {
        let mut sentence_start = true;
        for raw in sentence.as_ref().split_whitespace() {
            let core = trim_to_core(raw);
            let mark = raw
                .chars()
                .rev()
                .take_while(|c| !c.is_alphanumeric())
                .find_map(|c| match c {
                    ';' | ':' => Some(PunctMark::Comma),
                    c => PunctMark::from_char(c),
                });
            if core.is_empty() {
                // A detached mark ("ok , so") belongs to the previous word.
                if let (Some(mark), Some(prev)) = (mark, out.last_mut()) {
                    prev.mark = mark;
                    sentence_start = mark.ends_sentence();
                }
                continue;
            }
            let capitalized = core.chars().next().is_some_and(char::is_uppercase);
            let mark = mark.unwrap_or_default();
            out.push(Observation {
                word: core.to_lowercase(),
                mark,
                capitalized: (!sentence_start).then_some(capitalized),
            });
            sentence_start = mark.ends_sentence();
        }
    }
    out
}

/// Builds the frequency table from punctuated, cased sentences. The corpus
/// is read as one continuous stream, as the recognizer output is.
pub fn train_count_model(
    corpus: &[impl AsRef<str>],
    window_before: usize,
    window_after: usize,
) -> Result<CountModel> {
    let obs = observations(corpus);
    if obs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let words: Vec<&str> = obs.iter().map(|o| o.word.as_str()).collect();
    let levels = backoff_levels(window_before, window_after);
    let mut table: HashMap<String, Counts> = HashMap::new();
    for (i, o) in obs.iter().enumerate() {
        let start = i.saturating_sub(window_before);
        let end = (i + window_after + 1).min(words.len());
        let window = &words[start..end];
        for (level, &shape) in levels.iter().enumerate() {
            let counts = table
                .entry(context_key(level, shape, window, i - start))
                .or_default();
            counts.punct[o.mark as usize] += 1;
            if let Some(cap) = o.capitalized {
                counts.case[usize::from(cap)] += 1;
            }
        }
    }
    log::debug!(
        "trained punctuation model: {} tokens, {} keys",
        obs.len(),
        table.len()
    );
    Ok(CountModel {
        window_before,
        window_after,
        levels,
        table,
    })
}

impl WindowScorer for CountModel {
    fn score(&self, window: &[&str], center: usize) -> LabelScores {
        let mut scores = LabelScores {
            drop: [1.0, 0.0],
            ..LabelScores::default()
        };
        let mut need_punct = true;
        let mut need_case = true;
        for (level, &shape) in self.levels.iter().enumerate() {
            let Some(counts) = self.table.get(&context_key(level, shape, window, center)) else {
                continue;
            };
            if need_punct && counts.punct.iter().any(|&c| c > 0) {
                scores.punct = counts.punct.map(f64::from);
                need_punct = false;
            }
            if need_case && counts.case.iter().any(|&c| c > 0) {
                scores.capitalize = counts.case.map(f64::from);
                need_case = false;
            }
            if !need_punct && !need_case {
                break;
            }
        }
        scores
    }
}

impl CountModel {
    pub fn window_model(self) -> WindowModel {
        WindowModel::new(self.window_before, self.window_after, Arc::new(self))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{MODEL_HEADER} wb={} wa={}\n",
            self.window_before, self.window_after
        );
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        for (key, c) in rows {
            let _ = writeln!(
                out,
                "{key}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.punct[0], c.punct[1], c.punct[2], c.punct[3], c.case[0], c.case[1]
            );
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let (wb, wa) = parse_header(header).ok_or_else(|| {
            Error::parse(
                path,
                1,
                format!("expected \"{MODEL_HEADER} wb=N wa=N\", got {header:?}"),
            )
        })?;
        let levels = backoff_levels(wb, wa);
        let mut table = HashMap::new();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 10 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 10 fields, got {}", fields.len()),
                ));
            }
            let level: usize = fields[0]
                .parse()
                .ok()
                .filter(|&l| l < levels.len())
                .ok_or_else(|| Error::parse(path, lineno, format!("bad level {:?}", fields[0])))?;
            let mut nums = [0u32; 6];
            for (slot, field) in nums.iter_mut().zip(&fields[4..]) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad count {field:?}")))?;
            }
            let key = format!("{level}\t{}\t{}\t{}", fields[1], fields[2], fields[3]);
            table.insert(
                key,
                Counts {
                    punct: [nums[0], nums[1], nums[2], nums[3]],
                    case: [nums[4], nums[5]],
                },
            );
        }
        Ok(CountModel {
            window_before: wb,
            window_after: wa,
            levels,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix(MODEL_HEADER)?;
    let mut wb = None;
    let mut wa = None;
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("wb", v) => wb = v.parse().ok(),
            ("wa", v) => wa = v.parse().ok(),
            _ => return None,
        }
    }
    Some((wb?, wa?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::punctuation::{Punctuator, TokenLabel};
    use crate::types::{HypothesisUpdate, Token};
    use proptest::prelude::*;

    fn final_text(model: &WindowModel, words: &[&str]) -> String {
        let update = HypothesisUpdate {
            session_id: "s".into(),
            seq: 1,
            tokens: words.iter().map(|w| Token::new(*w).unwrap()).collect(),
            stable_prefix: words.len(),
            emitted_at_ms: 0,
        };
        Punctuator::new(model.clone(), "en").run(&update, true).text
    }

    #[test]
    fn single_observation() {
        let model = train_count_model(&["Go home."], 4, 2)
            .unwrap()
            .window_model();
        assert_eq!(
            model.label(&["go", "home"], 1).punct_after,
            PunctMark::Period
        );
    }

    #[test]
    fn unseen_token_falls_back() {
        let model = train_count_model(&["Go home."], 4, 2)
            .unwrap()
            .window_model();
        assert_eq!(model.label(&["zebra"], 0), TokenLabel::default());
    }

    #[test]
    fn majority_count_wins() {
        // "ok" is followed by a comma twice and a period once; the contexts
        // seen at inference are new, so the centre-only counts decide.
        let corpus = ["ok , so we start", "ok , so it goes", "ok ."];
        let model = train_count_model(&corpus, 4, 2).unwrap().window_model();
        assert_eq!(
            model.label(&["well", "ok", "then"], 1).punct_after,
            PunctMark::Comma
        );
    }

    #[test]
    fn thanks_ends_sentence() {
        // Hand-built table: "thanks" is followed by a period 3 of 3 times.
        let corpus = ["Thanks.", "Okay, thanks.", "Well thanks."];
        let model = train_count_model(&corpus, 4, 2).unwrap().window_model();
        assert_eq!(final_text(&model, &["thanks"]), "Thanks.");
    }

    #[test]
    fn capitalization_learned_mid_sentence() {
        let model = train_count_model(&["We met John today."], 4, 2)
            .unwrap()
            .window_model();
        assert_eq!(
            final_text(&model, &["we", "met", "john", "today"]),
            "We met John today."
        );
    }

    #[test]
    fn empty_corpus_is_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            train_count_model(&empty, 4, 2),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train_count_model(&[" , "], 4, 2),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn file_round_trip() {
        let model = train_count_model(&["Hello there, how are you?", "Fine."], 4, 2).unwrap();
        let text = model.render();
        assert!(text.starts_with("punctmodel v1 wb=4 wa=2\n"));
        let back = CountModel::parse(&text, Path::new("m")).unwrap();
        assert_eq!(back, model);
        assert!(CountModel::parse("punctmodel v2\n", Path::new("m")).is_err());
        assert!(CountModel::parse("punctmodel v1 wb=4 wa=2\n0\ta\n", Path::new("m")).is_err());
    }

    fn sentence_strategy() -> impl Strategy<Value = String> {
        let word = prop_oneof!["[a-z]{1,6}", "[A-Z][a-z]{1,5}"];
        (
            prop::collection::vec((word, any::<bool>()), 1..12),
            any::<bool>(),
        )
            .prop_map(|(words, question)| {
                let n = words.len();
                let mut out = Vec::new();
                for (i, (w, comma)) in words.into_iter().enumerate() {
                    let mut w = if i == 0 {
                        crate::punctuation::capitalize_first(&w)
                    } else {
                        w
                    };
                    if i + 1 == n {
                        w.push(if question { '?' } else { '.' });
                    } else if comma {
                        w.push(',');
                    }
                    out.push(w);
                }
                out.join(" ")
            })
    }

    proptest! {
        #[test]
        fn memorizes_single_sentence(sentence in sentence_strategy()) {
            let model = train_count_model(&[sentence.as_str()], 4, 2).unwrap().window_model();
            let stripped: Vec<String> = sentence
                .split_whitespace()
                .map(|w| trim_to_core(w).to_lowercase())
                .collect();
            let refs: Vec<&str> = stripped.iter().map(String::as_str).collect();
            prop_assert_eq!(final_text(&model, &refs), sentence);
        }
    }
}
