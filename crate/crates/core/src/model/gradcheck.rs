//! Exact loss gradients and their finite-difference check.

use rand::Rng;

use super::{train::Example, ModelConfig, ModelParams};
use crate::candidates::{
    block_candidates, seq_level_candidates, token_level_candidates, BlocklistAutomaton,
};
use crate::error::{Error, Result};
use crate::objectives::{build_terms, evaluate_terms, evaluate_terms_with_grad, LossValue, StepTerms};
use crate::rng;
use crate::tokenizer::{BOS, EOS, NUM_SPECIALS};
use crate::TokenId;

/// Loss computed over the target positions of an [`Example`].
#[derive(Debug, Clone)]
pub enum LossVariant {
    Mle,
    /// Likelihood plus unlikelihood of previous target tokens.
    TokenUl { alpha: f64 },
    /// Unlikelihood of tokens inside repeated n-grams (no likelihood term),
    /// as applied on sequence-level training steps.
    SeqUl { alpha: f64, n: usize },
    /// Likelihood plus unlikelihood of blocklist-covered tokens.
    Block { beta: f64, automaton: BlocklistAutomaton },
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Mle => "mle",
            LossVariant::TokenUl { .. } => "token_ul",
            LossVariant::SeqUl { .. } => "seq_ul",
            LossVariant::Block { .. } => "block",
        }
    }

    fn terms(&self, target: &[TokenId]) -> Vec<StepTerms> {
        let n = target.len();
        match self {
            LossVariant::Mle => build_terms(Some(target), &[], n),
            LossVariant::TokenUl { alpha } => {
                build_terms(Some(target), &[(&token_level_candidates(target), *alpha)], n)
            }
            LossVariant::SeqUl { alpha, n: order } => {
                build_terms(None, &[(&seq_level_candidates(target, *order), *alpha)], n)
            }
            LossVariant::Block { beta, automaton } => {
                build_terms(Some(target), &[(&block_candidates(target, automaton), *beta)], n)
            }
        }
    }
}

fn scored_rows(params: &ModelParams, ex: &Example) -> Result<(super::ForwardCache, usize)> {
    let full = ex.full();
    let cache = params.forward_sequence(&full[..full.len() - 1])?;
    Ok((cache, ex.prompt.len() - 1))
}

/// Loss value of `variant` on `ex`.
pub fn loss_value(params: &ModelParams, ex: &Example, variant: &LossVariant) -> Result<LossValue> {
    let (cache, from) = scored_rows(params, ex)?;
    let probs = cache.probs.slice(ndarray::s![from.., ..]);
    evaluate_terms(probs, &variant.terms(&ex.target))
}

/// Reverse-mode gradient of `variant` on `ex` with respect to every parameter.
pub fn loss_gradient(
    params: &ModelParams,
    ex: &Example,
    variant: &LossVariant,
) -> Result<(LossValue, Vec<f64>)> {
    let (cache, from) = scored_rows(params, ex)?;
    let probs = cache.probs.slice(ndarray::s![from.., ..]);
    let (value, g) = evaluate_terms_with_grad(probs, &variant.terms(&ex.target))?;
    let mut dlogits = ndarray::Array2::zeros(cache.probs.raw_dim());
    dlogits.slice_mut(ndarray::s![from.., ..]).assign(&g);
    Ok((value, params.backward(&cache, &dlogits)))
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(
    x: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Worst `|a - n| / max(|a|, |n|, 1e-6)` over coordinates. Gradients smaller
/// than the floor are effectively compared in absolute terms.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub const GRAD_CHECK_EPS: f64 = 1e-5;

fn random_example(rng: &mut impl Rng, vocab: usize, ctx: usize, variant: &LossVariant) -> Example {
    let word = |rng: &mut dyn rand::RngCore| rng.random_range(NUM_SPECIALS as TokenId..vocab as TokenId);
    let prompt = vec![BOS, word(rng), EOS];
    let len = ctx + 1 - prompt.len();
    let mut target: Vec<TokenId> = (0..len).map(|_| word(rng)).collect();
    match variant {
        LossVariant::SeqUl { n, .. } => {
            // Repeat an n-gram so that some candidates exist.
            let n = (*n).min(len / 2);
            let src = rng.random_range(0..=len - 2 * n);
            let dst = rng.random_range(src + n..=len - n);
            let gram = target[src..src + n].to_vec();
            target[dst..dst + n].copy_from_slice(&gram);
        }
        LossVariant::Block { automaton, .. } => {
            let phrase = &automaton.phrases()[rng.random_range(0..automaton.phrases().len())];
            if phrase.len() <= len {
                let at = rng.random_range(0..=len - phrase.len());
                target[at..at + phrase.len()].copy_from_slice(phrase);
            }
        }
        _ => {}
    }
    Example { prompt, target }
}

/// Finite-difference check of [`loss_gradient`] on `trials` randomly
/// initialized and perturbed models built from `config` (seeded by
/// `config.seed`). Returns the worst relative error seen.
pub fn grad_check(config: &ModelConfig, variant: &LossVariant, trials: usize) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Config("grad_check needs at least one trial".into()));
    }
    let mut rng = rng::substream(config.seed, "grad-check");
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let cfg = ModelConfig {
            seed: config.seed.wrapping_add(trial as u64),
            ..config.clone()
        };
        let mut params = ModelParams::init(&cfg)?;
        for p in params.flat.iter_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let ex = random_example(&mut rng, cfg.vocab_size, cfg.context_len, variant);
        let (_, analytic) = loss_gradient(&params, &ex, variant)?;
        let mut probe = params.clone();
        let numeric = numeric_gradient(&params.flat, GRAD_CHECK_EPS, |x| {
            probe.flat.copy_from_slice(x);
            Ok(loss_value(&probe, &ex, variant)?.loss)
        })?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::compile_blocklist;

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embed_dim: 4,
            ffn_dim: 6,
            context_len: 10,
            num_blocks: 1,
            seed,
        }
    }

    #[test]
    fn mle_gradient_is_exact() {
        assert!(grad_check(&tiny(1), &LossVariant::Mle, 2).unwrap() < 1e-4);
    }

    #[test]
    fn token_ul_gradient_is_exact() {
        let v = LossVariant::TokenUl { alpha: 1.0 };
        assert!(grad_check(&tiny(2), &v, 2).unwrap() < 1e-4);
    }

    #[test]
    fn block_gradient_is_exact() {
        let (automaton, _) = compile_blocklist(&[vec![5, 6]], 2, 10).unwrap();
        let v = LossVariant::Block { beta: 10.0, automaton };
        assert!(grad_check(&tiny(3), &v, 2).unwrap() < 1e-4);
    }

    #[test]
    fn two_blocks_gradient_is_exact() {
        let cfg = ModelConfig {
            num_blocks: 2,
            ..tiny(4)
        };
        let v = LossVariant::SeqUl { alpha: 1.0, n: 2 };
        assert!(grad_check(&cfg, &v, 2).unwrap() < 1e-4);
    }

    #[test]
    fn empty_candidates_reduce_to_likelihood_gradient() {
        let params = ModelParams::init(&tiny(5)).unwrap();
        let ex = Example {
            prompt: vec![BOS, 4, EOS],
            target: vec![4, 5, 6, 7, EOS],
        };
        let (automaton, _) = compile_blocklist(&[vec![7, 7]], 2, 10).unwrap();
        let (l0, g0) = loss_gradient(&params, &ex, &LossVariant::Mle).unwrap();
        let (l1, g1) =
            loss_gradient(&params, &ex, &LossVariant::Block { beta: 10.0, automaton }).unwrap();
        assert_eq!(l0.loss, l1.loss);
        assert_eq!(g0, g1);
        let (_, g2) = loss_gradient(&params, &ex, &LossVariant::TokenUl { alpha: 0.0 }).unwrap();
        assert_eq!(g0, g2);
    }

    #[test]
    fn block_term_couples_through_softmax_only() {
        // Token 7 is neither a target nor a candidate: its output-bias
        // gradient is Σ_t p_t(7) · (1 − Σ_c w·p_c/(1 − p_c)) / T.
        let mut params = ModelParams::init(&tiny(6)).unwrap();
        for (i, p) in params.flat.iter_mut().enumerate() {
            *p += 0.05 * ((i * 37 % 11) as f64 - 5.0);
        }
        let ex = Example {
            prompt: vec![BOS, 4, EOS],
            target: vec![5, 6, 4, 5, 6],
        };
        let (automaton, _) = compile_blocklist(&[vec![5, 6]], 2, 10).unwrap();
        let variant = LossVariant::Block { beta: 10.0, automaton };
        let (_, grad) = loss_gradient(&params, &ex, &variant).unwrap();
        let idx = params.layout().out_bias_index(7);

        let full = ex.full();
        let probs = params.next_token_probs(&full[..full.len() - 1], 2).unwrap();
        let n = ex.target.len() as f64;
        let mut expected = 0.0;
        for (t, &y) in ex.target.iter().enumerate() {
            let p = probs.row(t);
            let covered = matches!(t, 0 | 1 | 3 | 4);
            let coupling = if covered { 10.0 * p[y as usize] / (1.0 - p[y as usize]) } else { 0.0 };
            expected += p[7] * (1.0 - coupling) / n;
        }
        assert!((grad[idx] - expected).abs() < 1e-12, "{} vs {}", grad[idx], expected);

        let mut probe = params.clone();
        let fd = numeric_gradient(&params.flat[idx..=idx], GRAD_CHECK_EPS, |x| {
            probe.flat[idx] = x[0];
            Ok(loss_value(&probe, &ex, &variant)?.loss)
        })
        .unwrap()[0];
        assert!(max_relative_error(&[grad[idx]], &[fd]) < 1e-4);
    }
}
