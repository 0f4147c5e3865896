//! Aho–Corasick automaton over token ids.
//!
//! The alphabet is the open range of `u32` token ids, so transitions are kept
//! in per-node sorted vectors (dense at the root) instead of a byte table.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::TokenId;

const ROOT: u32 = 0;

#[derive(Debug, Clone)]
struct Node {
    /// Sorted by token id.
    edges: Vec<(TokenId, u32)>,
    fail: u32,
    /// Phrase ending exactly at this node.
    terminal: Option<u32>,
    /// Nearest proper suffix node (via fail links) that is terminal.
    dict: Option<u32>,
    depth: u32,
}

impl Node {
    fn new(depth: u32) -> Self {
        Node {
            edges: Vec::new(),
            fail: ROOT,
            terminal: None,
            dict: None,
            depth,
        }
    }

    fn child(&self, tok: TokenId) -> Option<u32> {
        self.edges
            .binary_search_by_key(&tok, |&(t, _)| t)
            .ok()
            .map(|i| self.edges[i].1)
    }
}

/// One occurrence of a blocklist phrase in a token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub start: usize,
    pub len: usize,
    /// Index into [`BlocklistAutomaton::phrases`].
    pub phrase: usize,
}

/// A phrase rejected at compile time because its length is outside the bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedPhrase {
    /// Position in the input list.
    pub index: usize,
    pub len: usize,
}

/// Compiled multi-pattern matcher over token-id phrases whose lengths lie in
/// `[n_min, n_max]`.
#[derive(Debug, Clone)]
pub struct BlocklistAutomaton {
    nodes: Vec<Node>,
    root_edges: HashMap<TokenId, u32>,
    phrases: Vec<Vec<TokenId>>,
    n_min: usize,
    n_max: usize,
}

impl BlocklistAutomaton {
    /// Compiles the phrases whose lengths fall in `[n_min, n_max]`; the rest
    /// are returned as dropped. Duplicate phrases are stored once.
    pub fn compile(
        phrases: &[Vec<TokenId>],
        n_min: usize,
        n_max: usize,
    ) -> Result<(Self, Vec<DroppedPhrase>)> {
        if n_min == 0 || n_min > n_max {
            return Err(Error::Config(format!(
                "phrase length bounds must satisfy 1 <= n_min <= n_max, got [{n_min}, {n_max}]"
            )));
        }
        let mut dropped = Vec::new();
        let mut kept: Vec<Vec<TokenId>> = Vec::new();
        for (index, p) in phrases.iter().enumerate() {
            if p.len() < n_min || p.len() > n_max {
                dropped.push(DroppedPhrase {
                    index,
                    len: p.len(),
                });
            } else if !kept.contains(p) {
                kept.push(p.clone());
            }
        }
        if kept.is_empty() {
            return Err(Error::Empty("blocklist after length filtering"));
        }

        let mut nodes = vec![Node::new(0)];
        for (pid, phrase) in kept.iter().enumerate() {
            let mut cur = ROOT;
            for &tok in phrase {
                cur = match nodes[cur as usize].child(tok) {
                    Some(next) => next,
                    None => {
                        let next = nodes.len() as u32;
                        let depth = nodes[cur as usize].depth + 1;
                        nodes.push(Node::new(depth));
                        let edges = &mut nodes[cur as usize].edges;
                        let pos = edges.partition_point(|&(t, _)| t < tok);
                        edges.insert(pos, (tok, next));
                        next
                    }
                };
            }
            nodes[cur as usize].terminal = Some(pid as u32);
        }

        // Breadth-first fail links.
        let mut queue = std::collections::VecDeque::new();
        for &(_, child) in &nodes[ROOT as usize].edges {
            queue.push_back(child);
        }
        while let Some(u) = queue.pop_front() {
            let edges = nodes[u as usize].edges.clone();
            for (tok, v) in edges {
                let mut f = nodes[u as usize].fail;
                let fail_target = loop {
                    if let Some(next) = nodes[f as usize].child(tok) {
                        break next;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = nodes[f as usize].fail;
                };
                nodes[v as usize].fail = fail_target;
                let ft = &nodes[fail_target as usize];
                nodes[v as usize].dict = if ft.terminal.is_some() {
                    Some(fail_target)
                } else {
                    ft.dict
                };
                queue.push_back(v);
            }
        }

        let root_edges = nodes[ROOT as usize].edges.iter().copied().collect();
        Ok((
            BlocklistAutomaton {
                nodes,
                root_edges,
                phrases: kept,
                n_min,
                n_max,
            },
            dropped,
        ))
    }

    pub fn phrases(&self) -> &[Vec<TokenId>] {
        &self.phrases
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    #[inline]
    fn step(&self, mut state: u32, tok: TokenId) -> u32 {
        loop {
            if state == ROOT {
                return self.root_edges.get(&tok).copied().unwrap_or(ROOT);
            }
            let node = &self.nodes[state as usize];
            if let Some(next) = node.child(tok) {
                return next;
            }
            state = node.fail;
        }
    }

    /// Calls `f(end, len, phrase)` for every occurrence, overlaps included,
    /// in order of increasing end position.
    pub fn for_each_match(&self, seq: &[TokenId], mut f: impl FnMut(usize, usize, usize)) {
        let mut state = ROOT;
        for (end, &tok) in seq.iter().enumerate() {
            state = self.step(state, tok);
            let node = &self.nodes[state as usize];
            let mut out = if node.terminal.is_some() {
                Some(state)
            } else {
                node.dict
            };
            while let Some(o) = out {
                let n = &self.nodes[o as usize];
                f(end, n.depth as usize, n.terminal.expect("dict links point at terminals") as usize);
                out = n.dict;
            }
        }
    }

    /// All occurrences sorted by (start, length, phrase).
    pub fn find_overlapping(&self, seq: &[TokenId]) -> Vec<Match> {
        let mut out = Vec::new();
        self.for_each_match(seq, |end, len, phrase| {
            out.push(Match {
                start: end + 1 - len,
                len,
                phrase,
            })
        });
        out.sort_unstable();
        out
    }

    pub fn is_match(&self, seq: &[TokenId]) -> bool {
        let mut state = ROOT;
        for &tok in seq {
            state = self.step(state, tok);
            let node = &self.nodes[state as usize];
            if node.terminal.is_some() || node.dict.is_some() {
                return true;
            }
        }
        false
    }

    /// Marks every position covered by at least one match window.
    pub fn coverage(&self, seq: &[TokenId]) -> Vec<bool> {
        // Longest match ending at each position, then a right-to-left sweep.
        let mut reach = vec![0usize; seq.len()];
        self.for_each_match(seq, |end, len, _| reach[end] = reach[end].max(len));
        let mut covered = vec![false; seq.len()];
        let mut remaining = 0usize;
        for t in (0..seq.len()).rev() {
            remaining = remaining.max(reach[t]);
            covered[t] = remaining > 0;
            remaining = remaining.saturating_sub(1);
        }
        covered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matches(seq: &[TokenId], phrases: &[Vec<TokenId>]) -> Vec<Match> {
        let mut out = Vec::new();
        for start in 0..seq.len() {
            for (pid, p) in phrases.iter().enumerate() {
                if seq[start..].starts_with(p) {
                    out.push(Match {
                        start,
                        len: p.len(),
                        phrase: pid,
                    });
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn single_pattern() {
        let (a, dropped) = BlocklistAutomaton::compile(&[vec![7, 8]], 2, 10).unwrap();
        assert!(dropped.is_empty());
        let m = a.find_overlapping(&[9, 7, 8, 7, 9, 7, 8]);
        assert_eq!(
            m,
            vec![
                Match { start: 1, len: 2, phrase: 0 },
                Match { start: 5, len: 2, phrase: 0 }
            ]
        );
    }

    #[test]
    fn overlapping_and_nested() {
        // p=1, q=2, r=3
        let phrases = vec![vec![1, 2], vec![2, 3]];
        let (a, _) = BlocklistAutomaton::compile(&phrases, 2, 10).unwrap();
        let m = a.find_overlapping(&[1, 2, 3]);
        assert_eq!(m.iter().map(|m| m.start).collect::<Vec<_>>(), vec![0, 1]);

        let phrases = vec![vec![1, 2, 3, 4], vec![2, 3], vec![3, 4], vec![1, 2, 3]];
        let (a, _) = BlocklistAutomaton::compile(&phrases, 2, 10).unwrap();
        let seq = [5, 1, 2, 3, 4, 1, 2, 3];
        assert_eq!(a.find_overlapping(&seq), naive_matches(&seq, a.phrases()));
    }

    #[test]
    fn length_bounds() {
        let (a, dropped) =
            BlocklistAutomaton::compile(&[vec![1], vec![1, 2], vec![1; 11]], 2, 10).unwrap();
        assert_eq!(a.phrases(), &[vec![1, 2]]);
        assert_eq!(dropped, vec![DroppedPhrase { index: 0, len: 1 }, DroppedPhrase { index: 2, len: 11 }]);
        assert!(BlocklistAutomaton::compile(&[vec![1]], 2, 10).is_err());
        let (a, _) = BlocklistAutomaton::compile(&[vec![1]], 1, 10).unwrap();
        assert!(a.is_match(&[0, 1]));
    }

    #[test]
    fn coverage_sweep() {
        let (a, _) = BlocklistAutomaton::compile(&[vec![1, 2, 3], vec![3, 4]], 2, 10).unwrap();
        assert_eq!(
            a.coverage(&[0, 1, 2, 3, 4, 0, 3]),
            vec![false, true, true, true, true, false, false]
        );
    }
}
