use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text::normalize_for_wer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerResult {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
    /// Percentage; exceeds 100 when the hypothesis is much longer than the reference.
    pub wer: f64,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Unit-cost Levenshtein distance using two rows.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One optimal alignment of `hypothesis` against `reference`.
///
/// Among equal-cost paths the backtrace prefers substitution (or match),
/// then insertion, then deletion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    assert!(n + m < u32::MAX as usize, "sequences too long to align");
    let width = m + 1;
    let mut table = vec![0u32; (n + 1) * width];
    for (j, cell) in table.iter_mut().take(width).enumerate() {
        *cell = j as u32;
    }
    for i in 1..=n {
        table[i * width] = i as u32;
        for j in 1..=m {
            let sub =
                table[(i - 1) * width + j - 1] + u32::from(reference[i - 1] != hypothesis[j - 1]);
            let del = table[(i - 1) * width + j] + 1;
            let ins = table[i * width + j - 1] + 1;
            table[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == table[(i - 1) * width + j - 1] + u32::from(!same) {
                ops.push(if same {
                    EditOp::Match
                } else {
                    EditOp::Substitute
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == table[i * width + j - 1] + 1 {
            ops.push(EditOp::Insert);
            j -= 1;
        } else {
            ops.push(EditOp::Delete);
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Word error rate of already-normalized token sequences.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    // Integer ids make the quadratic alignment compare words cheaply.
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut r = Vec::with_capacity(reference.len());
    let mut h = Vec::with_capacity(hypothesis.len());
    for (seq, out) in [(reference, &mut r), (hypothesis, &mut h)] {
        for w in seq {
            let next = ids.len() as u32;
            out.push(*ids.entry(w.as_ref()).or_insert(next));
        }
    }
    let mut result = WerResult {
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        reference_length: r.len(),
        wer: 0.0,
    };
    for op in align(&r, &h) {
        match op {
            EditOp::Match => {}
            EditOp::Substitute => result.substitutions += 1,
            EditOp::Insert => result.insertions += 1,
            EditOp::Delete => result.deletions += 1,
        }
    }
    result.wer = 100.0 * result.errors() as f64 / r.len() as f64;
    Ok(result)
}

/// Normalizes both texts with [`normalize_for_wer`] and scores them.
pub fn wer_text(reference: &str, hypothesis: &str) -> Result<WerResult> {
    wer(
        &normalize_for_wer(reference),
        &normalize_for_wer(hypothesis),
    )
}
