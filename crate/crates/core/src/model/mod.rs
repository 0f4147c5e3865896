//! Desk-scale autoregressive language model with hand-written reverse mode.
//!
//! Token and position embeddings feed `num_blocks` pre-residual blocks, each
//! a causal single-head self-attention followed by a two-layer tanh
//! feed-forward. Logits come from the tied token embedding plus an output
//! bias. All parameters live in one flat `f64` vector; [`Layout`] gives the
//! named views.

mod checkpoint;
mod gradcheck;
mod train;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, loss_gradient, max_relative_error, numeric_gradient, LossVariant};
pub use train::{
    encode_example, train, Example, Objective, StepKind, StepRecord, TokenBase, TrainLog,
    TrainPlan,
};

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::BOS;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub context_len: usize,
    pub num_blocks: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 64,
            ffn_dim: 128,
            context_len: 128,
            num_blocks: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("context_len", self.context_len),
            ("num_blocks", self.num_blocks),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    wq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    wo: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

/// Offsets of each named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    tok_emb: Range<usize>,
    pos_emb: Range<usize>,
    blocks: Vec<BlockLayout>,
    out_bias: Range<usize>,
    total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, f) = (c.embed_dim, c.ffn_dim);
        let tok_emb = take(c.vocab_size * d);
        let pos_emb = take(c.context_len * d);
        let blocks = (0..c.num_blocks)
            .map(|_| BlockLayout {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let out_bias = take(c.vocab_size);
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            out_bias,
            total: at,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Range of the output bias entry for `token`.
    pub fn out_bias_index(&self, token: TokenId) -> usize {
        self.out_bias.start + token as usize
    }

    /// Named `(name, range)` pairs in storage order.
    pub fn named(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.clone()),
            ("pos_emb".to_string(), self.pos_emb.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, r) in [
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("block{i}.{name}"), r.clone()));
            }
        }
        out.push(("out_bias".to_string(), self.out_bias.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub flat: Vec<f64>,
    /// Optimizer steps taken so far.
    pub step: u64,
    layout: Layout,
}

fn mat<'a>(flat: &'a [f64], r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &flat[r.clone()]).expect("layout matches config")
}

fn vec_view<'a>(flat: &'a [f64], r: &Range<usize>) -> ArrayView1<'a, f64> {
    ArrayView1::from(&flat[r.clone()])
}

fn softmax_inplace(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

struct BlockCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    mixed: Array2<f64>,
    mid: Array2<f64>,
    hidden: Array2<f64>,
}

/// Activations kept by [`ModelParams::forward_sequence`] for the backward pass.
pub struct ForwardCache {
    tokens: Vec<TokenId>,
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
    /// Next-token distributions, one row per input position.
    pub probs: Array2<f64>,
}

/// Per-block key/value rows for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    tokens: Vec<TokenId>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DecodeState {
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Next-token distribution after the current tokens.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl ModelParams {
    /// Random initialization: embeddings uniform in ±0.1, weight matrices
    /// uniform in ±1/√fan_in, biases zero. Deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut flat = vec![0.0; layout.len()];
        let mut rng = rng::substream(config.seed, "model-init");
        let mut fill = |flat: &mut [f64], r: &Range<usize>, a: f64| {
            for x in &mut flat[r.clone()] {
                *x = rng.random_range(-a..a);
            }
        };
        let d = config.embed_dim as f64;
        let f = config.ffn_dim as f64;
        fill(&mut flat, &layout.tok_emb, 0.1);
        fill(&mut flat, &layout.pos_emb, 0.1);
        for b in &layout.blocks {
            for r in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1] {
                fill(&mut flat, r, 1.0 / d.sqrt());
            }
            fill(&mut flat, &b.w2, 1.0 / f.sqrt());
        }
        Ok(ModelParams {
            config: config.clone(),
            flat,
            step: 0,
            layout,
        })
    }

    pub fn from_flat(config: ModelConfig, flat: Vec<f64>, step: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if flat.len() != layout.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector vs layout",
                left: flat.len(),
                right: layout.len(),
            });
        }
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
        }
        Ok(ModelParams {
            config,
            flat,
            step,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    fn tok_emb(&self) -> ArrayView2<'_, f64> {
        let c = &self.config;
        mat(&self.flat, &self.layout.tok_emb, c.vocab_size, c.embed_dim)
    }

    fn pos_emb(&self) -> ArrayView2<'_, f64> {
        let c = &self.config;
        mat(&self.flat, &self.layout.pos_emb, c.context_len, c.embed_dim)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let size = self.config.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size }),
            None => Ok(()),
        }
    }

    /// Teacher-forced pass over `tokens` (at most `context_len` of them).
    /// Row `t` of the result is the distribution of the token after `tokens[t]`.
    pub fn forward_sequence(&self, tokens: &[TokenId]) -> Result<ForwardCache> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        if tokens.is_empty() || tokens.len() > c.context_len {
            return Err(Error::Config(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                c.context_len
            )));
        }
        let t_len = tokens.len();
        let (d, f) = (c.embed_dim, c.ffn_dim);
        let scale = 1.0 / (d as f64).sqrt();
        let emb = self.tok_emb();
        let pos = self.pos_emb();
        let mut h = Array2::zeros((t_len, d));
        for (t, &tok) in tokens.iter().enumerate() {
            let mut row = h.row_mut(t);
            row.assign(&emb.row(tok as usize));
            row += &pos.row(t);
        }
        let mut blocks = Vec::with_capacity(c.num_blocks);
        for b in &self.layout.blocks {
            let q = h.dot(&mat(&self.flat, &b.wq, d, d));
            let k = h.dot(&mat(&self.flat, &b.wk, d, d));
            let v = h.dot(&mat(&self.flat, &b.wv, d, d));
            let mut attn = q.dot(&k.t());
            for (t, mut row) in attn.rows_mut().into_iter().enumerate() {
                let slice = row.as_slice_mut().expect("standard layout");
                for x in &mut slice[..=t] {
                    *x *= scale;
                }
                softmax_inplace(&mut slice[..=t]);
                for x in &mut slice[t + 1..] {
                    *x = 0.0;
                }
            }
            let mixed = attn.dot(&v);
            let mid = &h + &mixed.dot(&mat(&self.flat, &b.wo, d, d));
            let mut hidden = mid.dot(&mat(&self.flat, &b.w1, d, f));
            hidden += &vec_view(&self.flat, &b.b1);
            hidden.mapv_inplace(f64::tanh);
            let mut out = &mid + &hidden.dot(&mat(&self.flat, &b.w2, f, d));
            out += &vec_view(&self.flat, &b.b2);
            blocks.push(BlockCache {
                input: std::mem::replace(&mut h, out),
                q,
                k,
                v,
                attn,
                mixed,
                mid,
                hidden,
            });
        }
        let mut probs = h.dot(&emb.t());
        probs += &vec_view(&self.flat, &self.layout.out_bias);
        for mut row in probs.rows_mut() {
            softmax_inplace(row.as_slice_mut().expect("standard layout"));
        }
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            blocks,
            last: h,
            probs,
        })
    }

    /// Gradient of the loss with respect to every parameter, given
    /// `dloss/dlogits` for each row of `cache.probs`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> Vec<f64> {
        let c = &self.config;
        let (d, f) = (c.embed_dim, c.ffn_dim);
        let scale = 1.0 / (d as f64).sqrt();
        let mut grad = vec![0.0; self.flat.len()];
        let emb = self.tok_emb();

        let put = |grad: &mut [f64], r: &Range<usize>, a: &Array2<f64>| {
            for (g, x) in grad[r.clone()].iter_mut().zip(a.iter()) {
                *g += x;
            }
        };
        let put_vec = |grad: &mut [f64], r: &Range<usize>, a: &Array1<f64>| {
            for (g, x) in grad[r.clone()].iter_mut().zip(a.iter()) {
                *g += x;
            }
        };

        put(&mut grad, &self.layout.tok_emb, &dlogits.t().dot(&cache.last));
        put_vec(&mut grad, &self.layout.out_bias, &dlogits.sum_axis(Axis(0)));
        let mut dh = dlogits.dot(&emb);

        for (b, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            let wq = mat(&self.flat, &b.wq, d, d);
            let wk = mat(&self.flat, &b.wk, d, d);
            let wv = mat(&self.flat, &b.wv, d, d);
            let wo = mat(&self.flat, &b.wo, d, d);
            let w1 = mat(&self.flat, &b.w1, d, f);
            let w2 = mat(&self.flat, &b.w2, f, d);

            put(&mut grad, &b.w2, &bc.hidden.t().dot(&dh));
            put_vec(&mut grad, &b.b2, &dh.sum_axis(Axis(0)));
            let mut dpre = dh.dot(&w2.t());
            dpre.zip_mut_with(&bc.hidden, |g, &u| *g *= 1.0 - u * u);
            put(&mut grad, &b.w1, &bc.mid.t().dot(&dpre));
            put_vec(&mut grad, &b.b1, &dpre.sum_axis(Axis(0)));
            let dmid = &dh + &dpre.dot(&w1.t());

            put(&mut grad, &b.wo, &bc.mixed.t().dot(&dmid));
            let dmixed = dmid.dot(&wo.t());
            let dattn = dmixed.dot(&bc.v.t());
            let dv = bc.attn.t().dot(&dmixed);
            let mut dscore = &bc.attn * &dattn;
            for (mut row, a) in dscore.rows_mut().into_iter().zip(bc.attn.rows()) {
                let dot: f64 = row.sum();
                row.scaled_add(-dot, &a);
                row *= scale;
            }
            let dq = dscore.dot(&bc.k);
            let dk = dscore.t().dot(&bc.q);
            put(&mut grad, &b.wq, &bc.input.t().dot(&dq));
            put(&mut grad, &b.wk, &bc.input.t().dot(&dk));
            put(&mut grad, &b.wv, &bc.input.t().dot(&dv));
            dh = dmid + dq.dot(&wq.t()) + dk.dot(&wk.t()) + dv.dot(&wv.t());
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = dh.row(t);
            let e = self.layout.tok_emb.start + tok as usize * d;
            let p = self.layout.pos_emb.start + t * d;
            for (j, &g) in row.iter().enumerate() {
                grad[e + j] += g;
                grad[p + j] += g;
            }
        }
        grad
    }

    /// Next-token distribution after `prefix`. An empty prefix means `[BOS]`;
    /// prefixes longer than the context keep their last `context_len` tokens.
    pub fn forward(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.start_decode(prefix)?.probs)
    }

    /// Builds a decoding state holding key/value rows for `prefix`.
    pub fn start_decode(&self, prefix: &[TokenId]) -> Result<DecodeState> {
        self.check_tokens(prefix)?;
        let window: &[TokenId] = if prefix.is_empty() {
            &[BOS]
        } else {
            &prefix[prefix.len().saturating_sub(self.config.context_len)..]
        };
        let mut state = DecodeState {
            tokens: Vec::with_capacity(window.len() + 32),
            keys: vec![Vec::new(); self.config.num_blocks],
            values: vec![Vec::new(); self.config.num_blocks],
            probs: Vec::new(),
        };
        for &tok in window {
            self.append(&mut state, tok);
        }
        Ok(state)
    }

    /// Appends `tok` and refreshes the next-token distribution.
    pub fn push_token(&self, state: &mut DecodeState, tok: TokenId) -> Result<()> {
        self.check_tokens(&[tok])?;
        if state.tokens.len() == self.config.context_len {
            // Positions shift once the window is full; rebuild from scratch.
            let mut tokens = state.tokens[1..].to_vec();
            tokens.push(tok);
            *state = self.start_decode(&tokens)?;
        } else {
            self.append(state, tok);
        }
        Ok(())
    }

    fn append(&self, state: &mut DecodeState, tok: TokenId) {
        let c = &self.config;
        let (d, f) = (c.embed_dim, c.ffn_dim);
        let scale = 1.0 / (d as f64).sqrt();
        let t = state.tokens.len();
        let emb = self.tok_emb();
        let mut h = &emb.row(tok as usize) + &self.pos_emb().row(t);
        for (bi, b) in self.layout.blocks.iter().enumerate() {
            let q = h.dot(&mat(&self.flat, &b.wq, d, d));
            let k = h.dot(&mat(&self.flat, &b.wk, d, d));
            let v = h.dot(&mat(&self.flat, &b.wv, d, d));
            state.keys[bi].extend(k.iter());
            state.values[bi].extend(v.iter());
            let keys = ArrayView2::from_shape((t + 1, d), &state.keys[bi]).expect("rows of d");
            let values = ArrayView2::from_shape((t + 1, d), &state.values[bi]).expect("rows of d");
            let mut scores = keys.dot(&q);
            scores *= scale;
            softmax_inplace(scores.as_slice_mut().expect("contiguous"));
            let mixed = scores.dot(&values);
            let mid = &h + &mixed.dot(&mat(&self.flat, &b.wo, d, d));
            let mut hidden = mid.dot(&mat(&self.flat, &b.w1, d, f));
            hidden += &vec_view(&self.flat, &b.b1);
            hidden.mapv_inplace(f64::tanh);
            h = &mid + &hidden.dot(&mat(&self.flat, &b.w2, f, d));
            h += &vec_view(&self.flat, &b.b2);
        }
        let mut logits = emb.dot(&h);
        logits += &vec_view(&self.flat, &self.layout.out_bias);
        let mut probs = logits.to_vec();
        softmax_inplace(&mut probs);
        state.tokens.push(tok);
        state.probs = probs;
    }

    /// Distributions for the positions `from..tokens.len()` of a teacher-forced
    /// pass; convenience for evaluation.
    pub fn next_token_probs(&self, tokens: &[TokenId], from: usize) -> Result<Array2<f64>> {
        let cache = self.forward_sequence(tokens)?;
        Ok(cache.probs.slice(s![from.., ..]).to_owned())
    }

    /// One SGD step `θ ← θ − lr · g`.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.flat.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        self.step += 1;
    }
}

pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    ModelParams::init(config)
}

/// Initialized model with every parameter shifted by uniform noise in
/// `[-scale, scale)`, seeded by `config.seed`. Gives peaked, varied
/// distributions for exercising decoders and metrics.
pub fn random_model(config: &ModelConfig, scale: f64) -> Result<ModelParams> {
    let mut params = ModelParams::init(config)?;
    if scale > 0.0 {
        let mut rng = rng::substream(config.seed, "model-perturb");
        for p in params.flat.iter_mut() {
            *p += rng.random_range(-scale..scale);
        }
    }
    Ok(params)
}
