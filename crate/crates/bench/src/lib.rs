//! Deterministic synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slt_core::mtwrapper::TraceEvent;

/// A seeded word sequence over a `vocab`-sized alphabet.
pub fn words(len: usize, vocab: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..vocab)))
        .collect()
}

/// Splits `tokens` into consecutive sentences of `sentence_len` tokens.
pub fn sentences(tokens: &[String], sentence_len: usize) -> Vec<Vec<String>> {
    tokens
        .chunks(sentence_len.max(1))
        .map(<[String]>::to_vec)
        .collect()
}

/// A growing punctuated stream: one word per update every `gap_ms`, a
/// period every `sentence_len` words, and the last word revised once in a
/// while. Everything up to the previous sentence end is stable.
pub fn trace(len: usize, sentence_len: usize, gap_ms: u64, seed: u64) -> Vec<TraceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = words(len, 50, seed);
    let mut text = String::new();
    let mut stable = 0;
    let mut events = Vec::with_capacity(len);
    for (i, w) in words.iter().enumerate() {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(w);
        if (i + 1) % sentence_len == 0 {
            text.push('.');
        }
        let mut shown = text.clone();
        if rng.random_bool(0.2) {
            shown.push_str(" um");
        }
        events.push(TraceEvent {
            ts_ms: (i as u64 + 1) * gap_ms,
            text: shown,
            stable_chars: stable,
        });
        if (i + 1) % sentence_len == 0 {
            stable = text.len();
        }
    }
    events
}
