//! Shared oracles for the integration tests.
#![allow(dead_code)]

use alignlab_core::edit::{EditOp, EditScript};

/// Longest common subsequence length by the O(nm) table.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn block_cost(deleted: usize, inserted: usize) -> f64 {
    if deleted > 0 && inserted > 0 {
        2.0 * deleted as f64
    } else {
        (deleted + inserted) as f64
    }
}

/// Smallest and largest weighted script cost over every alignment that
/// keeps a longest common subsequence, with default weights. A script is
/// a sequence of change blocks separated by matched pairs, so the search
/// runs over the next matched pair from each point.
pub fn lcs_cost_range<T: Eq>(a: &[T], b: &[T]) -> (f64, f64) {
    let (n, m) = (a.len(), b.len());
    // best[x][y]: (matches, min cost, max cost) from (x, y) to the end.
    let mut best = vec![vec![(0usize, 0.0f64, 0.0f64); m + 1]; n + 1];
    for x in (0..=n).rev() {
        for y in (0..=m).rev() {
            let tail = block_cost(n - x, m - y);
            let mut cur = (0usize, tail, tail);
            for x2 in x..n {
                for y2 in y..m {
                    if a[x2] != b[y2] {
                        continue;
                    }
                    let (k, lo, hi) = best[x2 + 1][y2 + 1];
                    let c = block_cost(x2 - x, y2 - y);
                    let cand = (k + 1, lo + c, hi + c);
                    if cand.0 > cur.0 {
                        cur = cand;
                    } else if cand.0 == cur.0 {
                        cur.1 = cur.1.min(cand.1);
                        cur.2 = cur.2.max(cand.2);
                    }
                }
            }
            best[x][y] = cur;
        }
    }
    (best[0][0].1, best[0][0].2)
}

pub fn matched_tokens<T>(script: &EditScript<T>) -> usize {
    script
        .segments
        .iter()
        .filter(|s| s.op == EditOp::Equal)
        .map(|s| s.span())
        .sum()
}

/// Segments tile the source, equal segments carry no text, and no two
/// neighbours could have been merged.
pub fn well_formed<T>(script: &EditScript<T>) -> bool {
    let mut cursor = 0;
    let mut prev: Option<EditOp> = None;
    for s in &script.segments {
        if s.start != cursor || s.end < s.start {
            return false;
        }
        let shape_ok = match s.op {
            EditOp::Equal => s.text.is_empty() && s.span() > 0,
            EditOp::Delete => s.text.is_empty() && s.span() > 0,
            EditOp::Insert => !s.text.is_empty() && s.span() == 0,
            EditOp::Replace => !s.text.is_empty() && s.span() > 0,
        };
        let merged = match prev {
            None => true,
            Some(EditOp::Equal) => s.op != EditOp::Equal,
            Some(_) => s.op == EditOp::Equal,
        };
        if !shape_ok || !merged {
            return false;
        }
        cursor = s.end;
        prev = Some(s.op);
    }
    cursor == script.source_len
}

/// Every sequence over `alphabet` symbols with length at most `max_len`.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet as usize);
        for s in &frontier {
            for t in 0..alphabet {
                let mut v: Vec<u8> = s.clone();
                v.push(t);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Symbols first appear in increasing order (0, then 1, ...). Every
/// sequence equals exactly one such sequence up to renaming symbols.
pub fn is_canonical(seq: &[u8]) -> bool {
    let mut next = 0u8;
    for &t in seq {
        if t > next {
            return false;
        }
        if t == next {
            next += 1;
        }
    }
    true
}

/// Largest componentwise relative error between `analytic` and central
/// differences of `f` at `x`. Components where both values are below
/// `1e-8` in magnitude are compared absolutely.
pub fn max_fd_rel_error(analytic: &[f64], x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(analytic.len(), x.len());
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            (analytic[i] - numeric).abs()
        } else {
            (analytic[i] - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}
