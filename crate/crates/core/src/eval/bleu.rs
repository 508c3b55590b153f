use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuResult {
    /// Modified n-gram precisions as fractions, after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    /// Percentage in [0, 100].
    pub bleu: f64,
}

struct Tok13a {
    symbols: Regex,
    period_comma_after: Regex,
    period_comma_before: Regex,
    dash_after_digit: Regex,
}

fn tok13a() -> &'static Tok13a {
    static TOK: OnceLock<Tok13a> = OnceLock::new();
    TOK.get_or_init(|| Tok13a {
        symbols: Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(),
        period_comma_after: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// mteval-v13a style tokenization: punctuation and symbols are split from
/// words, periods and commas stay inside numbers. Case is preserved.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let tok = tok13a();
    let mut s = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let s = format!(" {s} ");
    let s = tok.symbols.replace_all(&s, " $1 ");
    let s = tok.period_comma_after.replace_all(&s, "$1 $2 ");
    let s = tok.period_comma_before.replace_all(&s, " $1 $2");
    let s = tok.dash_after_digit.replace_all(&s, "$1 $2 ");
    s.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for gram in tokens.windows(order) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over aligned candidate sentences.
///
/// `references` holds one or more reference sets, each aligned with
/// `candidates`. N-gram counts are clipped by the maximum count in any
/// reference; the reference length per sentence is the closest one
/// (shorter on ties). An order with no matches gets precision
/// `1 / (2^k * total_n)`, where `k` counts the zero-match orders so far.
pub fn corpus_bleu<S: AsRef<str>>(candidates: &[S], references: &[Vec<S>]) -> Result<BleuResult> {
    if references.is_empty() {
        return Err(Error::LengthMismatch("no reference sets".into()));
    }
    for (i, set) in references.iter().enumerate() {
        if set.len() != candidates.len() {
            return Err(Error::LengthMismatch(format!(
                "reference set {i} has {} sentences, expected {}",
                set.len(),
                candidates.len()
            )));
        }
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut candidate_length = 0;
    let mut reference_length = 0;

    for (i, candidate) in candidates.iter().enumerate() {
        let cand = tokenize_13a(candidate.as_ref());
        let refs: Vec<Vec<String>> = references
            .iter()
            .map(|set| tokenize_13a(set[i].as_ref()))
            .collect();
        candidate_length += cand.len();
        reference_length += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(cand.len()), len))
            .unwrap_or(0);

        for order in 1..=MAX_ORDER {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (gram, count) in ngram_counts(r, order) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in ngram_counts(&cand, order) {
                matches[order - 1] += count.min(max_ref.get(gram).copied().unwrap_or(0));
                totals[order - 1] += count;
            }
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            break;
        }
        precisions[n] = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }

    let brevity_penalty = if candidate_length == 0 {
        0.0
    } else if candidate_length >= reference_length {
        1.0
    } else {
        (1.0 - reference_length as f64 / candidate_length as f64).exp()
    };

    let bleu = if candidate_length == 0 || matches[0] == 0 || precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };

    Ok(BleuResult {
        precisions,
        matches,
        totals,
        brevity_penalty,
        candidate_length,
        reference_length,
        bleu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize_13a("Hello, world."),
            vec!["Hello", ",", "world", "."]
        );
        assert_eq!(
            tokenize_13a("It costs 3.50 (approx)!"),
            vec!["It", "costs", "3.50", "(", "approx", ")", "!"]
        );
        assert_eq!(tokenize_13a("1990-2000"), vec!["1990", "-", "2000"]);
        assert_eq!(tokenize_13a("don't"), vec!["don't"]);
    }

    #[test]
    fn identity_is_hundred() {
        let c = vec!["the quick brown fox jumps", "over the lazy dog ."];
        let r = corpus_bleu(&c, std::slice::from_ref(&c)).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn brevity_closed_form() {
        let r = corpus_bleu(&["a b c d"], &[vec!["a b c d e"]]).unwrap();
        assert_eq!(r.precisions, [1.0; 4]);
        let bp = (1.0f64 - 5.0 / 4.0).exp();
        assert!((r.brevity_penalty - bp).abs() < 1e-12);
        assert!((r.bleu - 77.88).abs() < 0.01, "{}", r.bleu);
    }

    #[test]
    fn clipping_limits_repeated_words() {
        let r = corpus_bleu(&["the the the the"], &[vec!["the cat"]]).unwrap();
        assert_eq!(r.matches[0], 1);
        assert_eq!(r.totals[0], 4);
    }

    #[test]
    fn closest_reference_length() {
        let r = corpus_bleu(&["a b c"], &[vec!["a b"], vec!["a b c d"]]).unwrap();
        // |3-2| == |3-4|: the shorter wins.
        assert_eq!(r.reference_length, 2);
    }

    #[test]
    fn exp_smoothing_for_zero_orders() {
        // 3-gram and 4-gram have no matches: k=1 then k=2.
        let r = corpus_bleu(&["a b x c d"], &[vec!["a b y c d"]]).unwrap();
        assert_eq!(r.matches, [4, 2, 0, 0]);
        assert_eq!(r.totals, [5, 4, 3, 2]);
        assert!((r.precisions[2] - 1.0 / 6.0).abs() < 1e-12);
        assert!((r.precisions[3] - 1.0 / 8.0).abs() < 1e-12);
        let manual = 100.0 * ((0.8f64 * 0.5 * (1.0 / 6.0) * 0.125).ln() / 4.0).exp();
        assert!((r.bleu - manual).abs() < 1e-9);
    }

    #[test]
    fn errors_and_degenerate() {
        assert!(corpus_bleu(&["a"], &[vec!["a", "b"]]).is_err());
        let none: Vec<Vec<&str>> = vec![];
        assert!(corpus_bleu(&["a"], &none).is_err());
        assert_eq!(corpus_bleu(&[""], &[vec!["a"]]).unwrap().bleu, 0.0);
        assert_eq!(
            corpus_bleu(&["z y x w"], &[vec!["a b c d"]]).unwrap().bleu,
            0.0
        );
        // Shorter than four tokens overall: no 4-grams, score 0.
        assert_eq!(corpus_bleu(&["a b"], &[vec!["a b"]]).unwrap().bleu, 0.0);
    }

    proptest! {
        #[test]
        fn permutation_equivariant(
            pairs in prop::collection::vec(("[abcd ]{0,12}", "[abcd ]{1,12}"), 1..8),
            seed in any::<u64>(),
        ) {
            let cands: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
            let refs: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
            let base = corpus_bleu(&cands, std::slice::from_ref(&refs)).unwrap().bleu;
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let mut s = seed;
            for i in (1..order.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pc: Vec<String> = order.iter().map(|&i| cands[i].clone()).collect();
            let pr: Vec<String> = order.iter().map(|&i| refs[i].clone()).collect();
            let permuted = corpus_bleu(&pc, &[pr]).unwrap().bleu;
            prop_assert!((base - permuted).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&base));
        }
    }
}
