//! Timing of candidate extraction: blocklist automaton against the naive
//! scan, plus the sequence-level detector for scale.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    block_candidates, compile_blocklist, naive_block_scan, seq_level_candidates, BLOCK_N_MAX,
    BLOCK_N_MIN, SEQ_NGRAM,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tokenizer::NUM_SPECIALS;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub stream_len: usize,
    pub num_phrases: usize,
    pub vocab_size: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Each timing is the fastest of this many runs.
    pub repeats: usize,
    /// Roughly one planted phrase per this many stream tokens.
    pub plant_every: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            stream_len: 10_000,
            num_phrases: 1_000,
            vocab_size: 200,
            n_min: BLOCK_N_MIN,
            n_max: BLOCK_N_MAX,
            repeats: 5,
            plant_every: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub compile_secs: f64,
    pub naive_secs: f64,
    pub automaton_secs: f64,
    /// `naive_secs / automaton_secs`, compile time excluded.
    pub speedup: f64,
    pub seq_level_secs: f64,
    pub covered_positions: usize,
    /// Whether both paths produced the same candidate schedule.
    pub equivalent: bool,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "stream {} tokens, {} phrases: naive {:.6}s, automaton {:.6}s (compile {:.6}s), speedup {:.1}x, seq-level {:.6}s, covered {}, equivalent {}",
            self.config.stream_len,
            self.config.num_phrases,
            self.naive_secs,
            self.automaton_secs,
            self.compile_secs,
            self.speedup,
            self.seq_level_secs,
            self.covered_positions,
            self.equivalent
        )
    }
}

/// Random token stream and phrase list, with phrases planted in the stream.
pub fn bench_inputs(config: &BenchConfig) -> (Vec<TokenId>, Vec<Vec<TokenId>>) {
    let mut rng = substream(config.seed, "bench-inputs");
    let lo = NUM_SPECIALS as TokenId;
    let hi = config.vocab_size as TokenId;
    let phrases: Vec<Vec<TokenId>> = (0..config.num_phrases)
        .map(|_| {
            let len = rng.random_range(config.n_min..=config.n_max);
            (0..len).map(|_| rng.random_range(lo..hi)).collect()
        })
        .collect();
    let mut stream = Vec::with_capacity(config.stream_len);
    while stream.len() < config.stream_len {
        if !phrases.is_empty() && rng.random_range(0..config.plant_every.max(1)) == 0 {
            let p = &phrases[rng.random_range(0..phrases.len())];
            stream.extend_from_slice(p);
        } else {
            stream.push(rng.random_range(lo..hi));
        }
    }
    stream.truncate(config.stream_len);
    (stream, phrases)
}

fn fastest<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let v = std::hint::black_box(f());
        best = best.min(start.elapsed().as_secs_f64());
        out = Some(v);
    }
    (best, out.expect("at least one run"))
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.vocab_size <= NUM_SPECIALS {
        return Err(Error::Config(format!(
            "bench vocabulary {} leaves no ordinary tokens",
            config.vocab_size
        )));
    }
    if config.n_min == 0 || config.n_min > config.n_max {
        return Err(Error::Config(format!(
            "invalid phrase length bounds [{}, {}]",
            config.n_min, config.n_max
        )));
    }
    let (stream, phrases) = bench_inputs(config);
    let (compile_secs, compiled) = fastest(config.repeats, || {
        compile_blocklist(&phrases, config.n_min, config.n_max)
    });
    let (automaton, _) = compiled?;
    let (naive_secs, naive) = fastest(config.repeats, || naive_block_scan(&stream, &phrases));
    let (automaton_secs, fast) = fastest(config.repeats, || block_candidates(&stream, &automaton));
    let (seq_level_secs, _) = fastest(config.repeats, || seq_level_candidates(&stream, SEQ_NGRAM));
    Ok(BenchReport {
        config: config.clone(),
        compile_secs,
        naive_secs,
        automaton_secs,
        speedup: naive_secs / automaton_secs.max(1e-12),
        seq_level_secs,
        covered_positions: fast.total(),
        equivalent: naive == fast,
    })
}
