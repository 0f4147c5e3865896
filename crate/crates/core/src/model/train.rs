//! Teacher-forced SGD training with staged initialization and
//! sequence-level mixing.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::candidates::{
    block_candidates, seq_level_candidates, token_level_candidates, BlocklistAutomaton,
};
use crate::corpus::CorpusSample;
use crate::decoding::greedy_decode;
use crate::error::{Error, Result};
use crate::objectives::{build_terms, evaluate_terms_with_grad, ObjectiveConfig, StepTerms};
use crate::rng;
use crate::tokenizer::{Vocab, BOS, EOS};
use crate::TokenId;

/// A training/evaluation pair: the EOS-terminated outline prompt and the
/// EOS-terminated paragraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// `[BOS] outline [EOS]`
    pub prompt: Vec<TokenId>,
    /// `paragraph [EOS]`
    pub target: Vec<TokenId>,
}

impl Example {
    /// `prompt ++ target`, the full teacher-forced stream.
    pub fn full(&self) -> Vec<TokenId> {
        let mut v = self.prompt.clone();
        v.extend(&self.target);
        v
    }

    /// The paragraph tokens without the trailing EOS.
    pub fn paragraph(&self) -> &[TokenId] {
        match self.target.last() {
            Some(&EOS) => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

/// Encodes a sample so that `prompt ++ target` fits `context_len + 1` tokens
/// (inputs are everything but the last token). Long outlines keep their last
/// `context_len / 2` tokens; long paragraphs lose their tail.
pub fn encode_example(sample: &CorpusSample, vocab: &Vocab, context_len: usize) -> Example {
    let mut prompt = vec![BOS];
    prompt.extend(vocab.encode(&sample.bullet_points).iter());
    prompt.push(EOS);
    if prompt.len() > context_len / 2 {
        prompt = prompt[prompt.len() - context_len / 2..].to_vec();
    }
    let mut target = vocab.encode(&sample.paragraph).into_inner();
    target.push(EOS);
    target.truncate(context_len + 1 - prompt.len());
    Example { prompt, target }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mle,
    TokenUl,
    SeqUl,
    SeqUlBlock,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mle => "mle",
            Objective::TokenUl => "token_ul",
            Objective::SeqUl => "seq_ul",
            Objective::SeqUlBlock => "seq_ul_block",
        }
    }

    pub fn is_sequence_level(self) -> bool {
        matches!(self, Objective::SeqUl | Objective::SeqUlBlock)
    }
}

/// Objective used on the token-level share of sequence-level training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenBase {
    Mle,
    TokenUl,
}

/// What a single optimizer step computed.
pub type StepKind = Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub objective: Objective,
    pub objective_config: ObjectiveConfig,
    /// Architecture used when `init_from` is absent.
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Seeds shuffling and the mixing draws.
    pub seed: u64,
    /// Token-level objective for sequence-level plans; resolved from
    /// `init_lineage` when absent.
    pub token_base: Option<TokenBase>,
    /// Ground-truth paragraph tokens kept before decoding a continuation.
    pub seq_prefix_len: usize,
    /// Greedy continuation length on sequence-level steps.
    pub continuation_len: usize,
    /// For `seq_ul_block`: also penalize repeated n-grams (`alpha`) besides
    /// blocklist matches (`beta`).
    pub block_with_repetition: bool,
    #[serde(skip)]
    pub init_from: Option<ModelParams>,
    /// Objective the `init_from` parameters were trained with.
    pub init_lineage: Option<Objective>,
}

impl TrainPlan {
    pub fn new(objective: Objective, model: ModelConfig) -> Self {
        TrainPlan {
            objective,
            objective_config: ObjectiveConfig::default(),
            model,
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.1,
            clip_norm: 1.0,
            seed: 0,
            token_base: None,
            seq_prefix_len: 0,
            continuation_len: 32,
            block_with_repetition: true,
            init_from: None,
            init_lineage: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective_config.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.objective.is_sequence_level() && self.continuation_len == 0 {
            return Err(Error::Config("continuation length must be positive".into()));
        }
        let ctx = self
            .init_from
            .as_ref()
            .map_or(self.model.context_len, |p| p.config.context_len);
        if ctx < self.objective_config.seq_ngram {
            return Err(Error::Config("context shorter than the n-gram order".into()));
        }
        Ok(())
    }

    pub fn resolved_token_base(&self) -> TokenBase {
        if let Some(b) = self.token_base {
            return b;
        }
        match self.objective {
            Objective::Mle => TokenBase::Mle,
            Objective::TokenUl => TokenBase::TokenUl,
            Objective::SeqUl | Objective::SeqUlBlock => match self.init_lineage {
                Some(Objective::TokenUl | Objective::SeqUl | Objective::SeqUlBlock) => {
                    TokenBase::TokenUl
                }
                _ => TokenBase::Mle,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub kind: StepKind,
    pub loss: f64,
    pub clamp_events: usize,
    /// Wall time of the last 100 steps, reported every 100th step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secs_per_100_steps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Total seconds and step count per step kind.
    pub time_by_kind: BTreeMap<StepKind, (f64, usize)>,
}

impl TrainLog {
    /// Mean seconds per 100 steps of the given kind.
    pub fn secs_per_100(&self, kind: StepKind) -> Option<f64> {
        self.time_by_kind
            .get(&kind)
            .filter(|(_, n)| *n > 0)
            .map(|(secs, n)| 100.0 * secs / *n as f64)
    }

    pub fn count(&self, kind: StepKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Newline-delimited JSON, one record per step.
    pub fn to_ndjson(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("plain record"));
            s.push('\n');
        }
        s
    }
}

struct SampleOutcome {
    loss: f64,
    clamps: usize,
    grad: Option<Vec<f64>>,
}

fn scored_pass(
    params: &ModelParams,
    full: &[TokenId],
    first_scored: usize,
    terms: &[StepTerms],
) -> Result<SampleOutcome> {
    let inputs = &full[..full.len() - 1];
    let cache = params.forward_sequence(inputs)?;
    let from = first_scored - 1;
    let (value, g) = evaluate_terms_with_grad(cache.probs.slice(s![from.., ..]), terms)?;
    let mut dlogits = Array2::zeros(cache.probs.raw_dim());
    dlogits.slice_mut(s![from.., ..]).assign(&g);
    Ok(SampleOutcome {
        loss: value.loss,
        clamps: value.clamp_events,
        grad: Some(params.backward(&cache, &dlogits)),
    })
}

fn token_step(
    params: &ModelParams,
    ex: &Example,
    base: TokenBase,
    alpha: f64,
) -> Result<SampleOutcome> {
    let cands = token_level_candidates(&ex.target);
    let weight = match base {
        TokenBase::Mle => 0.0,
        TokenBase::TokenUl => alpha,
    };
    let terms = build_terms(Some(&ex.target), &[(&cands, weight)], ex.target.len());
    scored_pass(params, &ex.full(), ex.prompt.len(), &terms)
}

/// Unlikelihood on a greedy continuation: candidates come from the decoded
/// paragraph (ground-truth prefix included), the penalty applies to the
/// decoded positions only, and there is no likelihood term.
fn sequence_step(
    params: &ModelParams,
    ex: &Example,
    plan: &TrainPlan,
    automaton: Option<&BlocklistAutomaton>,
) -> Result<SampleOutcome> {
    let cfg = &plan.objective_config;
    let ctx = params.config.context_len;
    let keep = plan.seq_prefix_len.min(ex.target.len().saturating_sub(1));
    let mut prefix = ex.prompt.clone();
    prefix.extend(&ex.target[..keep]);
    let room = (ctx + 1).saturating_sub(prefix.len());
    let cont = greedy_decode(params, &prefix, plan.continuation_len.min(room))?;
    if cont.is_empty() {
        return Ok(SampleOutcome {
            loss: 0.0,
            clamps: 0,
            grad: None,
        });
    }
    let mut paragraph = ex.target[..keep].to_vec();
    paragraph.extend(&cont);

    let mut schedules = Vec::new();
    let repetition = seq_level_candidates(&paragraph, cfg.seq_ngram);
    let blocked = automaton.map(|a| block_candidates(&paragraph, a));
    match plan.objective {
        Objective::SeqUl => schedules.push((&repetition, cfg.alpha)),
        Objective::SeqUlBlock => {
            if plan.block_with_repetition {
                schedules.push((&repetition, cfg.alpha));
            }
            schedules.push((blocked.as_ref().expect("checked by train"), cfg.beta));
        }
        _ => unreachable!("sequence steps only run for sequence-level objectives"),
    }
    let all_terms = build_terms(None, &schedules, paragraph.len());
    let terms = &all_terms[keep..];
    if terms.iter().all(|t| t.penalties.is_empty()) {
        return Ok(SampleOutcome {
            loss: 0.0,
            clamps: 0,
            grad: None,
        });
    }
    let mut full = ex.prompt.clone();
    full.extend(&paragraph);
    scored_pass(params, &full, ex.prompt.len() + keep, terms)
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= k;
        }
    }
}

/// Trains according to `plan`. Fully deterministic in the examples, the plan
/// (seed included), and the initial parameters.
pub fn train(
    examples: &[Example],
    plan: &TrainPlan,
    automaton: Option<&BlocklistAutomaton>,
) -> Result<(ModelParams, TrainLog)> {
    plan.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    match (plan.objective, automaton) {
        (Objective::SeqUlBlock, None) => {
            return Err(Error::Config("seq_ul_block requires a blocklist".into()))
        }
        (Objective::SeqUlBlock, Some(_)) | (_, None) => {}
        (other, Some(_)) => {
            return Err(Error::Config(format!(
                "a blocklist is only used by seq_ul_block, not {}",
                other.name()
            )))
        }
    }
    let mut params = match &plan.init_from {
        Some(p) => p.clone(),
        None => ModelParams::init(&plan.model)?,
    };
    for ex in examples {
        params.check_tokens(&ex.prompt)?;
        params.check_tokens(&ex.target)?;
        if ex.prompt.is_empty() || ex.target.is_empty() {
            return Err(Error::Empty("example prompt or target"));
        }
        if ex.prompt.len() + ex.target.len() > params.config.context_len + 1 {
            return Err(Error::Config("example longer than the model context".into()));
        }
    }

    let base = plan.resolved_token_base();
    let base_kind = match base {
        TokenBase::Mle => Objective::Mle,
        TokenBase::TokenUl => Objective::TokenUl,
    };
    let alpha = plan.objective_config.alpha;
    let mut shuffle_rng = rng::substream(plan.seed, "train-shuffle");
    let mut mix_rng = rng::substream(plan.seed, "train-mix");
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut window_start = Instant::now();
    let mut step = 0usize;

    for _epoch in 0..plan.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(plan.batch_size) {
            let started = Instant::now();
            let kind = if plan.objective.is_sequence_level() {
                let u: f64 = mix_rng.random();
                if u < plan.objective_config.mix_prob {
                    plan.objective
                } else {
                    base_kind
                }
            } else {
                base_kind
            };

            let mut grad = vec![0.0; params.num_params()];
            let mut loss = 0.0;
            let mut clamps = 0;
            for &i in batch {
                let ex = &examples[i];
                let out = if kind.is_sequence_level() {
                    sequence_step(&params, ex, plan, automaton)
                } else {
                    token_step(&params, ex, base, alpha)
                };
                let out = out.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        step,
                        loss: f64::INFINITY,
                    },
                    other => other,
                })?;
                loss += out.loss;
                clamps += out.clamps;
                if let Some(g) = out.grad {
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
            }
            let n = batch.len() as f64;
            loss /= n;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            for g in grad.iter_mut() {
                *g /= n;
            }
            clip(&mut grad, plan.clip_norm);
            params.apply_gradient(&grad, plan.learning_rate);

            let entry = log.time_by_kind.entry(kind).or_insert((0.0, 0));
            entry.0 += started.elapsed().as_secs_f64();
            entry.1 += 1;
            step += 1;
            let secs_per_100_steps = if step % 100 == 0 {
                let s = window_start.elapsed().as_secs_f64();
                window_start = Instant::now();
                Some(s)
            } else {
                None
            };
            log.records.push(StepRecord {
                step,
                kind,
                loss,
                clamp_events: clamps,
                secs_per_100_steps,
            });
        }
    }
    Ok((params, log))
}
