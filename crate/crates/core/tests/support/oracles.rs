//! Brute-force reference implementations, written independently of the
//! library code they check.
#![allow(dead_code)]

use ulkit::TokenId;

/// (rep, wrep) counts by explicit window slices.
pub fn rep(gold: &[TokenId], preds: &[TokenId], l: usize) -> (usize, usize) {
    let mut r = 0;
    let mut w = 0;
    for t in 0..gold.len() {
        let window = &gold[t.saturating_sub(l)..t];
        if window.contains(&preds[t]) {
            r += 1;
            if preds[t] != gold[t] {
                w += 1;
            }
        }
    }
    (r, w)
}

pub fn seq_rep(seq: &[TokenId], n: usize) -> f64 {
    if seq.len() < n {
        return 0.0;
    }
    let total = seq.len() - n + 1;
    let mut distinct = 0;
    for i in 0..total {
        if (0..i).all(|j| seq[j..j + n] != seq[i..i + n]) {
            distinct += 1;
        }
    }
    1.0 - distinct as f64 / total as f64
}

pub fn uniq(outputs: &[Vec<TokenId>]) -> usize {
    let mut all: Vec<TokenId> = outputs.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    all.len()
}

fn count(seq: &[TokenId], gram: &[TokenId]) -> usize {
    (0..seq.len().saturating_sub(gram.len() - 1))
        .filter(|&i| seq[i..i + gram.len()] == *gram)
        .count()
}

fn f1(overlap: usize, c: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c as f64;
    let rec = overlap as f64 / r as f64;
    2.0 * p * rec / (p + rec)
}

pub fn rouge_n(c: &[TokenId], r: &[TokenId], n: usize) -> f64 {
    if c.len() < n || r.len() < n {
        return 0.0;
    }
    let mut overlap = 0;
    for i in 0..=c.len() - n {
        let g = &c[i..i + n];
        // count each distinct gram once, at its first occurrence
        if (0..i).any(|j| c[j..j + n] == *g) {
            continue;
        }
        overlap += count(c, g).min(count(r, g));
    }
    f1(overlap, c.len() - n + 1, r.len() - n + 1)
}

fn is_subsequence(sub: &[TokenId], seq: &[TokenId]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// LCS length by trying every subsequence of the shorter input.
pub fn lcs(a: &[TokenId], b: &[TokenId]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "exponential oracle");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<TokenId> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| short[i])
            .collect();
        if is_subsequence(&sub, long) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(c: &[TokenId], r: &[TokenId]) -> f64 {
    f1(lcs(c, r), c.len(), r.len())
}

/// Per-position candidate sets of the sequence-level detector, by checking
/// every window against every earlier non-overlapping window.
pub fn seq_level(seq: &[TokenId], n: usize) -> Vec<Vec<TokenId>> {
    let len = seq.len();
    let mut marked = vec![false; len];
    if len >= n {
        for s in 0..=len - n {
            let repeated = (0..=len - n).any(|f| f + n <= s && seq[f..f + n] == seq[s..s + n]);
            if repeated {
                marked[s..s + n].iter_mut().for_each(|m| *m = true);
            }
        }
    }
    (0..len)
        .map(|t| if marked[t] { vec![seq[t]] } else { vec![] })
        .collect()
}

/// Per-position block candidate sets by direct comparison at every offset.
pub fn block(seq: &[TokenId], phrases: &[Vec<TokenId>]) -> Vec<Vec<TokenId>> {
    let mut marked = vec![false; seq.len()];
    for p in phrases {
        for s in 0..seq.len() {
            if s + p.len() <= seq.len() && seq[s..s + p.len()] == p[..] {
                for m in &mut marked[s..s + p.len()] {
                    *m = true;
                }
            }
        }
    }
    (0..seq.len())
        .map(|t| if marked[t] { vec![seq[t]] } else { vec![] })
        .collect()
}

/// Mean negative log-likelihood straight from the probability rows.
pub fn mean_nll(rows: &[Vec<f64>], targets: &[TokenId]) -> f64 {
    let total: f64 = rows
        .iter()
        .zip(targets)
        .map(|(r, &y)| -r[y as usize].ln())
        .sum();
    total / targets.len() as f64
}
