//! Trigram truecaser: each word takes its most frequent surface form given
//! up to two preceding words, backing off to shorter contexts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::capitalize_first;
use crate::error::{Error, Result};

pub const TRUECASE_HEADER: &str = "truecasemodel v1";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruecaseModel {
    /// `"<n>\t<lowercase n-gram>"` -> surface form of the last word -> count.
    table: HashMap<String, BTreeMap<String, u32>>,
}

/// Splits a raw token into leading punctuation, word core and trailing
/// punctuation.
fn split_core(raw: &str) -> (&str, &str, &str) {
    let start = raw.find(char::is_alphanumeric);
    let end = raw.rfind(char::is_alphanumeric);
    match (start, end) {
        (Some(s), Some(e)) => {
            let e = e + raw[e..].chars().next().map_or(1, char::len_utf8);
            (&raw[..s], &raw[s..e], &raw[e..])
        }
        _ => (raw, "", ""),
    }
}

fn ends_sentence(trail: &str) -> bool {
    trail.contains(['.', '?', '!'])
}

fn keys(history: &[String], word: &str) -> [Option<String>; 3] {
    let n = history.len();
    [
        (n >= 2).then(|| format!("3\t{} {} {word}", history[n - 2], history[n - 1])),
        (n >= 1).then(|| format!("2\t{} {word}", history[n - 1])),
        Some(format!("1\t{word}")),
    ]
}

impl TruecaseModel {
    /// Counts surface forms over cased sentences. Sentence-initial words
    /// carry no casing evidence and are only used as context.
    pub fn train(corpus: &[impl AsRef<str>]) -> Self {
        let mut model = TruecaseModel::default();
        for sentence in corpus {
            let mut history: Vec<String> = Vec::new();
            let mut sentence_start = true;
            for raw in sentence.as_ref().split_whitespace() {
                let (_, core, trail) = split_core(raw);
                if core.is_empty() {
                    sentence_start |= ends_sentence(trail) || ends_sentence(raw);
                    continue;
                }
                let lower = core.to_lowercase();
                if !sentence_start {
                    for key in keys(&history, &lower).into_iter().flatten() {
                        *model
                            .table
                            .entry(key)
                            .or_default()
                            .entry(core.to_string())
                            .or_insert(0) += 1;
                    }
                }
                history.push(lower);
                sentence_start = ends_sentence(trail);
            }
        }
        model
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn best_form(&self, history: &[String], core: &str) -> Option<String> {
        let lower = core.to_lowercase();
        for key in keys(history, &lower).into_iter().flatten() {
            if let Some(forms) = self.table.get(&key) {
                let top = forms.values().copied().max().unwrap_or(0);
                if forms.get(core) == Some(&top) {
                    return Some(core.to_string());
                }
                // BTreeMap order: the lexicographically smallest among ties.
                return forms
                    .iter()
                    .find(|(_, &c)| c == top)
                    .map(|(f, _)| f.clone());
            }
        }
        None
    }

    /// Recases whitespace tokens that may carry attached punctuation.
    pub fn recase_words(&self, words: &[String]) -> Vec<String> {
        let mut history: Vec<String> = Vec::new();
        let mut sentence_start = true;
        words
            .iter()
            .map(|raw| {
                let (lead, core, trail) = split_core(raw);
                if core.is_empty() {
                    sentence_start |= ends_sentence(raw);
                    return raw.clone();
                }
                let mut form = self
                    .best_form(&history, core)
                    .unwrap_or_else(|| core.to_string());
                if sentence_start {
                    form = capitalize_first(&form);
                }
                history.push(core.to_lowercase());
                sentence_start = ends_sentence(trail);
                format!("{lead}{form}{trail}")
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!("{TRUECASE_HEADER}\n");
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        for key in keys {
            for (form, count) in &self.table[key] {
                let _ = writeln!(out, "{key}\t{form}\t{count}");
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRUECASE_HEADER) {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {TRUECASE_HEADER:?}"),
            ));
        }
        let mut model = TruecaseModel::default();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let count = match fields.as_slice() {
                [order, _, _, count] if matches!(*order, "1" | "2" | "3") => {
                    count.parse::<u32>().ok()
                }
                _ => None,
            }
            .ok_or_else(|| Error::parse(path, n + 2, "expected order, context, form, count"))?;
            let key = format!("{}\t{}", fields[0], fields[1]);
            model
                .table
                .entry(key)
                .or_default()
                .insert(fields[2].to_string(), count);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Recases a whitespace-tokenized text.
pub fn truecase(text: &str, model: &TruecaseModel) -> String {
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    model.recase_words(&words).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_hit_and_initial_capital() {
        let model = TruecaseModel::train(&["We moved to New York last year."]);
        assert_eq!(truecase("i live in new york", &model), "I live in New York");
    }

    #[test]
    fn unseen_tokens_unchanged() {
        let model = TruecaseModel::default();
        assert_eq!(truecase("foo bAr baz. qux", &model), "Foo bAr baz. Qux");
        assert_eq!(truecase("", &model), "");
    }

    #[test]
    fn majority_after_context() {
        let mut corpus = vec!["We saw the US team."; 3];
        corpus.extend(["Tell the us story.", "They know the us version."]);
        let model = TruecaseModel::train(&corpus);
        assert_eq!(truecase("so the us", &model), "So the US");
    }

    #[test]
    fn trigram_beats_unigram() {
        let corpus = [
            "We like apple pie.",
            "We like apple pie.",
            "We bought an Apple phone.",
        ];
        let model = TruecaseModel::train(&corpus);
        assert_eq!(
            truecase("they like apple pie", &model),
            "They like apple pie"
        );
        assert_eq!(truecase("an apple phone", &model), "An Apple phone");
    }

    #[test]
    fn punctuation_preserved() {
        let model = TruecaseModel::train(&["Ask John, then leave."]);
        assert_eq!(
            truecase("ask john, then. john", &model),
            "Ask John, then. John"
        );
    }

    #[test]
    fn file_round_trip() {
        let model = TruecaseModel::train(&["I met the US team in New York."]);
        let back = TruecaseModel::parse(&model.render(), Path::new("t")).unwrap();
        assert_eq!(back, model);
        assert!(TruecaseModel::parse("nope\n", Path::new("t")).is_err());
    }
}
