//! Per-timestep negative candidate sets for the unlikelihood objectives.
//!
//! Three sources are supported: previous target tokens (token level),
//! tokens inside a repeated n-gram (sequence level), and tokens covered by a
//! blocklist phrase (block loss). Each set is stored sorted and deduplicated.

mod automaton;

use std::collections::{BTreeSet, HashMap};

pub use automaton::{BlocklistAutomaton, DroppedPhrase, Match};

use crate::error::Result;
use crate::TokenId;

/// Default phrase-length bounds for blocklist phrases.
pub const BLOCK_N_MIN: usize = 2;
pub const BLOCK_N_MAX: usize = 10;
/// Default n-gram order for sequence-level candidates.
pub const SEQ_NGRAM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateSource {
    TokenLevel,
    SeqLevel,
    Block,
    /// Union of several sources.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSchedule {
    pub sets: Vec<Vec<TokenId>>,
    pub source: CandidateSource,
}

impl CandidateSchedule {
    pub fn empty(len: usize, source: CandidateSource) -> Self {
        CandidateSchedule {
            sets: vec![Vec::new(); len],
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Per-timestep union with `other`; both must have the same length.
    pub fn union(&self, other: &CandidateSchedule) -> CandidateSchedule {
        assert_eq!(self.len(), other.len(), "schedules must be aligned");
        let sets = self
            .sets
            .iter()
            .zip(&other.sets)
            .map(|(a, b)| {
                let mut s: Vec<TokenId> = a.iter().chain(b).copied().collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        let source = if self.source == other.source {
            self.source
        } else {
            CandidateSource::Mixed
        };
        CandidateSchedule { sets, source }
    }

    fn from_coverage(seq: &[TokenId], covered: &[bool], source: CandidateSource) -> Self {
        CandidateSchedule {
            sets: seq
                .iter()
                .zip(covered)
                .map(|(&tok, &c)| if c { vec![tok] } else { Vec::new() })
                .collect(),
            source,
        }
    }
}

/// `sets[t]` = distinct tokens of `target[..t]` other than `target[t]`.
pub fn token_level_candidates(target: &[TokenId]) -> CandidateSchedule {
    let mut seen = BTreeSet::new();
    let mut sets = Vec::with_capacity(target.len());
    for &tok in target {
        sets.push(seen.iter().copied().filter(|&c| c != tok).collect());
        seen.insert(tok);
    }
    CandidateSchedule {
        sets,
        source: CandidateSource::TokenLevel,
    }
}

/// Marks `x_t` when some length-`n` window containing `t` already occurred
/// entirely before that window's start.
///
/// Each window is looked up against the first occurrence of its n-gram, so
/// the scan is linear in the sequence length.
pub fn seq_level_candidates(seq: &[TokenId], n: usize) -> CandidateSchedule {
    assert!(n >= 1, "n-gram order must be positive");
    let len = seq.len();
    let mut covered = vec![false; len];
    if len >= n {
        let mut first: HashMap<&[TokenId], usize> = HashMap::with_capacity(len);
        // +1 at a repeated window's start, -1 past its end.
        let mut delta = vec![0i32; len + 1];
        for start in 0..=len - n {
            let window = &seq[start..start + n];
            let f = *first.entry(window).or_insert(start);
            if f + n <= start {
                delta[start] += 1;
                delta[start + n] -= 1;
            }
        }
        let mut run = 0;
        for t in 0..len {
            run += delta[t];
            covered[t] = run > 0;
        }
    }
    CandidateSchedule::from_coverage(seq, &covered, CandidateSource::SeqLevel)
}

/// Compiles blocklist phrases with the given length bounds. Out-of-range
/// phrases are dropped and reported.
pub fn compile_blocklist(
    phrases: &[Vec<TokenId>],
    n_min: usize,
    n_max: usize,
) -> Result<(BlocklistAutomaton, Vec<DroppedPhrase>)> {
    BlocklistAutomaton::compile(phrases, n_min, n_max)
}

/// `sets[t] = {x_t}` when position `t` lies inside any blocklist match.
pub fn block_candidates(seq: &[TokenId], automaton: &BlocklistAutomaton) -> CandidateSchedule {
    CandidateSchedule::from_coverage(seq, &automaton.coverage(seq), CandidateSource::Block)
}

/// Reference implementation of [`block_candidates`]: every start position is
/// compared against every phrase.
pub fn naive_block_scan(seq: &[TokenId], phrases: &[Vec<TokenId>]) -> CandidateSchedule {
    let mut covered = vec![false; seq.len()];
    for start in 0..seq.len() {
        for phrase in phrases {
            let end = start + phrase.len();
            if !phrase.is_empty() && end <= seq.len() && seq[start..end] == phrase[..] {
                for c in &mut covered[start..end] {
                    *c = true;
                }
            }
        }
    }
    CandidateSchedule::from_coverage(seq, &covered, CandidateSource::Block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: TokenId = 10;
    const B: TokenId = 11;
    const C: TokenId = 12;
    const P: TokenId = 20;
    const Q: TokenId = 21;
    const R: TokenId = 22;
    const S: TokenId = 23;

    /// Direct transcription of the window condition: some window of length
    /// `n` containing `t` appears as a contiguous run of `seq[..start]`.
    fn brute_seq_level(seq: &[TokenId], n: usize) -> Vec<Vec<TokenId>> {
        (0..seq.len())
            .map(|t| {
                let hit = (0..n).any(|i| {
                    let j = n - 1 - i;
                    if i > t || t + j >= seq.len() {
                        return false;
                    }
                    let start = t - i;
                    let window = &seq[start..=t + j];
                    seq[..start].windows(n).any(|w| w == window)
                });
                if hit {
                    vec![seq[t]]
                } else {
                    vec![]
                }
            })
            .collect()
    }

    #[test]
    fn token_level_examples() {
        let s = token_level_candidates(&[A, B, C, B]);
        assert_eq!(s.sets, vec![vec![], vec![A], vec![A, B], vec![A, C]]);
        let s = token_level_candidates(&[A, B, C]);
        assert_eq!(s.sets[2], vec![A, B]);
        let s = token_level_candidates(&[A, A, A]);
        assert_eq!(s.sets, vec![Vec::<TokenId>::new(); 3]);
    }

    #[test]
    fn seq_level_examples() {
        let x = [A, B, A, B, A, B];
        let expected = vec![vec![], vec![], vec![A], vec![B], vec![A], vec![B]];
        assert_eq!(brute_seq_level(&x, 2), expected);
        assert_eq!(seq_level_candidates(&x, 2).sets, expected);

        let x = [A, A, A, A];
        let expected = vec![vec![], vec![A], vec![A], vec![A]];
        assert_eq!(brute_seq_level(&x, 1), expected);
        assert_eq!(seq_level_candidates(&x, 1).sets, expected);

        assert_eq!(seq_level_candidates(&[A, B, C, P, Q], 2).total(), 0);
        assert_eq!(seq_level_candidates(&[A], 4).sets, vec![Vec::<TokenId>::new()]);
    }

    #[test]
    fn overlapping_occurrence_is_not_a_repeat() {
        // (a,a) at 0 and at 1 overlap; the window at 1 starts before the
        // first occurrence ends, so nothing is marked.
        assert_eq!(seq_level_candidates(&[A, A, A], 2).total(), 0);
        assert_eq!(brute_seq_level(&[A, A, A], 2), vec![Vec::<TokenId>::new(); 3]);
    }

    #[test]
    fn block_examples() {
        let (auto, _) = compile_blocklist(&[vec![P, Q]], 2, 10).unwrap();
        let seq = [R, P, Q, S];
        let expected = vec![vec![], vec![P], vec![Q], vec![]];
        assert_eq!(block_candidates(&seq, &auto).sets, expected);
        assert_eq!(naive_block_scan(&seq, auto.phrases()).sets, expected);

        assert_eq!(block_candidates(&[R, S, R], &auto).total(), 0);

        let (auto, _) = compile_blocklist(&[vec![P, Q], vec![Q, R]], 2, 10).unwrap();
        let seq = [P, Q, R];
        let expected = vec![vec![P], vec![Q], vec![R]];
        assert_eq!(block_candidates(&seq, &auto).sets, expected);
        assert_eq!(naive_block_scan(&seq, auto.phrases()).sets, expected);
    }

    #[test]
    fn union_merges_sets() {
        let a = token_level_candidates(&[A, B, A]);
        let b = seq_level_candidates(&[A, B, A], 1);
        let u = a.union(&b);
        assert_eq!(u.sets, vec![vec![], vec![A], vec![A, B]]);
        assert_eq!(u.source, CandidateSource::Mixed);
    }

    fn seq_strategy() -> impl Strategy<Value = Vec<TokenId>> {
        prop::collection::vec(0u32..6, 0..60)
    }

    fn phrases_strategy() -> impl Strategy<Value = Vec<Vec<TokenId>>> {
        prop::collection::vec(prop::collection::vec(0u32..6, 2..5), 1..8)
    }

    proptest! {
        #[test]
        fn seq_level_matches_brute_force(seq in seq_strategy(), n in 1usize..5) {
            prop_assert_eq!(seq_level_candidates(&seq, n).sets, brute_seq_level(&seq, n));
        }

        #[test]
        fn automaton_matches_naive(seq in seq_strategy(), phrases in phrases_strategy()) {
            let (auto, _) = compile_blocklist(&phrases, 2, 10).unwrap();
            prop_assert_eq!(block_candidates(&seq, &auto), naive_block_scan(&seq, &phrases));
        }

        #[test]
        fn token_level_subset_of_prefix(seq in seq_strategy()) {
            let s = token_level_candidates(&seq);
            for (t, set) in s.sets.iter().enumerate() {
                prop_assert!(!set.contains(&seq[t]));
                prop_assert!(set.iter().all(|c| seq[..t].contains(c)));
            }
        }

        #[test]
        fn seq_level_only_marks_current_token(seq in seq_strategy(), n in 1usize..5) {
            for (t, set) in seq_level_candidates(&seq, n).sets.iter().enumerate() {
                prop_assert!(set.is_empty() || set == &vec![seq[t]]);
            }
        }

        #[test]
        fn matches_stable_under_suffix(
            seq in seq_strategy(),
            phrases in phrases_strategy(),
            suffix in prop::collection::vec(100u32..110, 0..10),
        ) {
            let (auto, _) = compile_blocklist(&phrases, 2, 10).unwrap();
            let before = auto.find_overlapping(&seq);
            let mut longer = seq.clone();
            longer.extend(&suffix);
            prop_assert_eq!(auto.find_overlapping(&longer), before);
        }

        #[test]
        fn adding_phrase_never_shrinks(
            seq in seq_strategy(),
            phrases in phrases_strategy(),
            extra in prop::collection::vec(0u32..6, 2..5),
        ) {
            let (small, _) = compile_blocklist(&phrases, 2, 10).unwrap();
            let mut more = phrases.clone();
            more.push(extra);
            let (big, _) = compile_blocklist(&more, 2, 10).unwrap();
            let a = block_candidates(&seq, &small);
            let b = block_candidates(&seq, &big);
            for (x, y) in a.sets.iter().zip(&b.sets) {
                prop_assert!(x.iter().all(|c| y.contains(c)));
            }
        }
    }
}
