//! Resegmentation of an unsegmented hypothesis against reference sentences
//! by minimum total edit distance.
//!
//! Any chunking's per-segment alignments compose into one alignment of the
//! hypothesis against the concatenated references, and every alignment of
//! the concatenation crosses each segment boundary at some hypothesis
//! position. The optimum is therefore the plain edit distance against the
//! concatenation; the boundaries are recovered left to right, taking the
//! earliest position that still admits an optimal completion.

/// Chunk boundaries and the minimal summed edit cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// Exclusive end of each chunk in the hypothesis; one per reference
    /// segment, the last always equal to the hypothesis length.
    pub boundaries: Vec<usize>,
    pub total_edit_cost: usize,
}

impl Segmentation {
    pub fn chunks<'a, T>(&self, hypothesis: &'a [T]) -> Vec<&'a [T]> {
        let mut start = 0;
        self.boundaries
            .iter()
            .map(|&end| {
                let chunk = &hypothesis[start..end];
                start = end;
                chunk
            })
            .collect()
    }
}

/// Partitions `hypothesis` into `references.len()` contiguous, possibly
/// empty chunks minimizing the sum of per-chunk edit distances. Ties go to
/// the lexicographically earliest boundary vector.
///
/// Runs in O(|hyp| * Σ|ref|) time and O(|hyp| * |refs|) memory.
pub fn mwer_segment<T: PartialEq>(hypothesis: &[T], references: &[Vec<T>]) -> Segmentation {
    let n = hypothesis.len();
    let k = references.len();
    if k == 0 {
        return Segmentation {
            boundaries: Vec::new(),
            total_edit_cost: n,
        };
    }

    let concat: Vec<&T> = references.iter().flatten().collect();
    let mut ends = Vec::with_capacity(k);
    let mut acc = 0;
    for r in references {
        acc += r.len();
        ends.push(acc);
    }

    // boundary_rows[b][j] = ED(hyp[j..], concat[ends[b]..])
    let total_len = concat.len();
    let mut row: Vec<usize> = (0..=n).map(|j| n - j).collect();
    let mut boundary_rows: Vec<Option<Vec<usize>>> = vec![None; k];
    for (b, &e) in ends.iter().enumerate() {
        if e == total_len {
            boundary_rows[b] = Some(row.clone());
        }
    }
    let mut next = vec![0usize; n + 1];
    for r in (0..total_len).rev() {
        next[n] = total_len - r;
        for j in (0..n).rev() {
            let sub = row[j + 1] + usize::from(*concat[r] != hypothesis[j]);
            next[j] = sub.min(row[j] + 1).min(next[j + 1] + 1);
        }
        std::mem::swap(&mut row, &mut next);
        for (b, &e) in ends.iter().enumerate() {
            if e == r && boundary_rows[b].is_none() {
                boundary_rows[b] = Some(row.clone());
            }
        }
    }
    let total = row[0];

    let mut boundaries = Vec::with_capacity(k);
    let mut start = 0;
    let mut prefix_cost = 0;
    let mut dp = Vec::with_capacity(n + 1);
    let mut dp_next = Vec::with_capacity(n + 1);
    for (b, segment) in references.iter().enumerate() {
        let after = boundary_rows[b].as_ref().expect("boundary row computed");
        // dp[j - start] = ED(hyp[start..j], segment)
        dp.clear();
        dp.extend(0..=(n - start));
        for (i, token) in segment.iter().enumerate() {
            dp_next.clear();
            dp_next.push(i + 1);
            for (col, word) in hypothesis[start..n].iter().enumerate() {
                let sub = dp[col] + usize::from(token != word);
                let v = sub.min(dp[col + 1] + 1).min(dp_next[col] + 1);
                dp_next.push(v);
            }
            std::mem::swap(&mut dp, &mut dp_next);
        }
        let end = if b + 1 == k {
            n
        } else {
            (start..=n)
                .find(|&j| prefix_cost + dp[j - start] + after[j] == total)
                .expect("an optimal completion always exists")
        };
        prefix_cost += dp[end - start];
        boundaries.push(end);
        start = end;
    }
    debug_assert_eq!(prefix_cost, total);

    Segmentation {
        boundaries,
        total_edit_cost: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::wer::edit_distance;

    fn v(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn perfect_hypothesis() {
        let refs = vec![v("a b"), v("c"), v("d e f")];
        let hyp = v("a b c d e f");
        let s = mwer_segment(&hyp, &refs);
        assert_eq!(s.boundaries, vec![2, 3, 6]);
        assert_eq!(s.total_edit_cost, 0);
    }

    #[test]
    fn small_enumerated_case() {
        // Placements of one boundary in ["a","c"]: 0 -> 2+1=3, 1 -> 1+0=1, 2 -> 1+1=2.
        let refs = vec![v("a b"), v("c")];
        let hyp = v("a c");
        let s = mwer_segment(&hyp, &refs);
        assert_eq!(s.boundaries, vec![1, 2]);
        assert_eq!(s.total_edit_cost, 1);
        assert_eq!(s.chunks(&hyp), vec![&["a"][..], &["c"][..]]);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let refs = vec![v("a b"), v("c"), v("d")];
        let hyp: Vec<&str> = vec![];
        let s = mwer_segment(&hyp, &refs);
        assert_eq!(s.boundaries, vec![0, 0, 0]);
        assert_eq!(s.total_edit_cost, 4);
    }

    #[test]
    fn earliest_boundary_on_ties() {
        // "x" is an insertion either at the end of chunk 1 or start of chunk 2.
        let refs = vec![v("a"), v("b")];
        let hyp = v("a x b");
        let s = mwer_segment(&hyp, &refs);
        assert_eq!(s.total_edit_cost, 1);
        assert_eq!(s.boundaries, vec![1, 3]);
    }

    #[test]
    fn empty_reference_segments() {
        let refs = vec![vec![], v("a"), vec![]];
        let hyp = v("a b");
        let s = mwer_segment(&hyp, &refs);
        assert_eq!(s.total_edit_cost, 1);
        assert_eq!(s.boundaries, vec![0, 1, 2]);
        let sum: usize = s
            .chunks(&hyp)
            .iter()
            .zip(&refs)
            .map(|(c, r)| edit_distance(c, r))
            .sum();
        assert_eq!(sum, s.total_edit_cost);
    }
}
