//! Greedy and beam-search generation.
//!
//! Generated sequences include the terminating EOS when one was produced.
//! Hypotheses are ranked by length-normalized log-probability (sum of token
//! log-probabilities divided by the number of generated tokens); ties go to
//! the lexicographically smaller token sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeState, ModelParams};
use crate::tokenizer::EOS;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_size: 5,
            max_len: 64,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest probability; ties go to the smallest id.
fn argmax(probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Appends the most probable token until EOS or `max_len` tokens.
pub fn greedy_decode(params: &ModelParams, prefix: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    let mut out = Vec::with_capacity(max_len);
    if max_len == 0 {
        return Ok(out);
    }
    let mut state = params.start_decode(prefix)?;
    loop {
        let tok = argmax(state.probs());
        out.push(tok);
        if tok == EOS || out.len() == max_len {
            return Ok(out);
        }
        params.push_token(&mut state, tok)?;
    }
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    logp: f64,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logp / self.tokens.len() as f64
        }
    }
}

fn better(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search keeping `beam_size` live hypotheses.
///
/// At each step every live hypothesis is extended by every token and the
/// extensions are ranked by cumulative log-probability (ties: lexicographic).
/// EOS extensions ranked within the first `beam_size` become finished; the
/// best `beam_size` non-EOS extensions stay live. Search stops once
/// `beam_size` hypotheses have finished or at `max_len`; the result is the
/// best finished hypothesis, with hypotheses still live at `max_len`
/// competing on equal terms.
pub fn beam_search(params: &ModelParams, prefix: &[TokenId], config: &DecodeConfig) -> Result<Vec<TokenId>> {
    config.validate()?;
    let k = config.beam_size;
    let mut live: Vec<(Hypothesis, DecodeState)> = vec![(
        Hypothesis {
            tokens: Vec::new(),
            logp: 0.0,
        },
        params.start_decode(prefix)?,
    )];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..config.max_len {
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::with_capacity(live.len() * params.config.vocab_size);
        for (h, (hyp, state)) in live.iter().enumerate() {
            for (tok, &p) in state.probs().iter().enumerate() {
                cands.push((hyp.logp + p.ln(), h, tok as TokenId));
            }
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| {
                let ta = &live[a.1].0.tokens;
                let tb = &live[b.1].0.tokens;
                ta.iter().chain([&a.2]).cmp(tb.iter().chain([&b.2]))
            })
        });

        let mut next = Vec::with_capacity(k);
        for (rank, &(logp, h, tok)) in cands.iter().enumerate() {
            if tok == EOS {
                if rank < k {
                    let mut tokens = live[h].0.tokens.clone();
                    tokens.push(EOS);
                    finished.push(Hypothesis { tokens, logp });
                }
                continue;
            }
            if next.len() < k {
                next.push((logp, h, tok));
            }
            if next.len() == k && rank >= k {
                break;
            }
        }
        if finished.len() >= k {
            live.clear();
            break;
        }
        live = next
            .into_iter()
            .map(|(logp, h, tok)| {
                let (parent, state) = &live[h];
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                let mut state = state.clone();
                params.push_token(&mut state, tok)?;
                Ok((Hypothesis { tokens, logp }, state))
            })
            .collect::<Result<_>>()?;
        if live.is_empty() {
            break;
        }
    }

    let pool = finished.into_iter().chain(live.into_iter().map(|(h, _)| h));
    Ok(pool.min_by(better).map(|h| h.tokens).unwrap_or_default())
}

/// Decodes with the configured strategy.
pub fn decode(params: &ModelParams, prefix: &[TokenId], config: &DecodeConfig) -> Result<Vec<TokenId>> {
    config.validate()?;
    match config.strategy {
        Strategy::Greedy => greedy_decode(params, prefix, config.max_len),
        Strategy::Beam => beam_search(params, prefix, config),
    }
}

/// Length-normalized log-probability of `generated` after `prefix`.
pub fn normalized_score(params: &ModelParams, prefix: &[TokenId], generated: &[TokenId]) -> Result<f64> {
    if generated.is_empty() {
        return Ok(0.0);
    }
    let mut state = params.start_decode(prefix)?;
    let mut logp = 0.0;
    for (i, &tok) in generated.iter().enumerate() {
        logp += state.probs()[tok as usize].ln();
        if i + 1 < generated.len() {
            params.push_token(&mut state, tok)?;
        }
    }
    Ok(logp / generated.len() as f64)
}

/// Drops a trailing EOS, if present.
pub fn strip_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}
