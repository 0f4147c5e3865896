//! Shared fixtures for the benchmarks.

use ulkit::candidates::{compile_blocklist, BlocklistAutomaton};
use ulkit::model::{random_model, Example, ModelConfig, ModelParams};
use ulkit::perf::{bench_inputs, BenchConfig};
use ulkit::tokenizer::{BOS, EOS, NUM_SPECIALS};
use ulkit::TokenId;

pub struct BlockFixture {
    pub stream: Vec<TokenId>,
    pub phrases: Vec<Vec<TokenId>>,
    pub automaton: BlocklistAutomaton,
}

pub fn block_fixture(stream_len: usize, num_phrases: usize) -> BlockFixture {
    let config = BenchConfig {
        stream_len,
        num_phrases,
        ..BenchConfig::default()
    };
    let (stream, phrases) = bench_inputs(&config);
    let (automaton, _) = compile_blocklist(&phrases, config.n_min, config.n_max).expect("valid bounds");
    BlockFixture {
        stream,
        phrases,
        automaton,
    }
}

/// Default-sized model with a full-context example.
pub fn model_fixture(vocab_size: usize) -> (ModelParams, Example) {
    let config = ModelConfig::new(vocab_size);
    let params = random_model(&config, 0.1).expect("valid config");
    let word = |i: usize| (NUM_SPECIALS + (i * 31) % (vocab_size - NUM_SPECIALS)) as TokenId;
    let prompt: Vec<TokenId> = std::iter::once(BOS).chain((0..20).map(word)).chain([EOS]).collect();
    let target = (0..config.context_len + 1 - prompt.len()).map(|i| word(i + 7)).collect();
    (params, Example { prompt, target })
}
