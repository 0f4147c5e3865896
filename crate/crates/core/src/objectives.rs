//! Likelihood, unlikelihood, and block losses over per-timestep distributions.
//!
//! Every loss is a per-token mean of
//! `-log p_t(y_t) - Σ_c w_c · log(1 - p_t(c))`, where the target term may be
//! absent and `c` ranges over the weighted negative candidates of step `t`.
//! Gradients are returned with respect to the pre-softmax logits.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::candidates::{block_candidates, BlocklistAutomaton, CandidateSchedule};
use crate::error::{Error, Result};
use crate::TokenId;

/// Candidate probabilities are clamped to this value before `log1p(-p)`.
pub const CLAMP_MAX: f64 = 1.0 - 1e-7;
/// Tolerance on the row sums of a [`DistributionSequence`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Weight of the token- and sequence-level unlikelihood terms.
    pub alpha: f64,
    /// Weight of the block-loss unlikelihood term.
    pub beta: f64,
    /// n-gram order for sequence-level candidates.
    pub seq_ngram: usize,
    /// Probability that a training step is a sequence-level step.
    pub mix_prob: f64,
    pub block_n_min: usize,
    pub block_n_max: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha: 1.0,
            beta: 10.0,
            seq_ngram: crate::candidates::SEQ_NGRAM,
            mix_prob: 0.5,
            block_n_min: crate::candidates::BLOCK_N_MIN,
            block_n_max: crate::candidates::BLOCK_N_MAX,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(Error::Config(format!(
                "mix_prob must lie in [0, 1], got {}",
                self.mix_prob
            )));
        }
        if self.seq_ngram == 0 {
            return Err(Error::Config("seq_ngram must be positive".into()));
        }
        if self.block_n_min == 0 || self.block_n_min > self.block_n_max {
            return Err(Error::Config(format!(
                "block phrase bounds must satisfy 1 <= min <= max, got [{}, {}]",
                self.block_n_min, self.block_n_max
            )));
        }
        Ok(())
    }
}

/// Next-token distributions, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSequence {
    probs: Array2<f64>,
}

impl DistributionSequence {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (t, row) in probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::NonFinite {
                    timestep: t,
                    token: None,
                });
            }
        }
        Ok(DistributionSequence { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Dimension(width, r.len()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let probs = Array2::from_shape_vec((rows.len(), width), flat).expect("shape checked");
        Self::new(probs)
    }

    /// Uniform distribution over `vocab` tokens at each of `len` steps.
    pub fn uniform(len: usize, vocab: usize) -> Self {
        DistributionSequence {
            probs: Array2::from_elem((len, vocab), 1.0 / vocab as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.probs.row(t)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }
}

/// Loss contributions at one timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTerms {
    /// Token whose log-probability is maximized, if any.
    pub target: Option<TokenId>,
    /// `(candidate, weight)` pairs penalized with `-w · log(1 - p)`.
    pub penalties: Vec<(TokenId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Per-token mean loss. `+inf` when a target has zero probability.
    pub loss: f64,
    /// Number of candidate probabilities clamped to [`CLAMP_MAX`].
    pub clamp_events: usize,
    /// First timestep whose target had zero probability.
    pub zero_target: Option<usize>,
}

impl LossValue {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
    }
}

/// Builds step terms from a target and weighted candidate schedules.
/// Zero-weight schedules contribute nothing.
pub fn build_terms(
    target: Option<&[TokenId]>,
    schedules: &[(&CandidateSchedule, f64)],
    len: usize,
) -> Vec<StepTerms> {
    (0..len)
        .map(|t| {
            let mut penalties: Vec<(TokenId, f64)> = Vec::new();
            for (sched, w) in schedules {
                if *w == 0.0 {
                    continue;
                }
                for &c in &sched.sets[t] {
                    match penalties.iter_mut().find(|(tok, _)| *tok == c) {
                        Some(entry) => entry.1 += w,
                        None => penalties.push((c, *w)),
                    }
                }
            }
            StepTerms {
                target: target.map(|x| x[t]),
                penalties,
            }
        })
        .collect()
}

fn check_alignment(probs: &ArrayView2<f64>, terms: &[StepTerms]) -> Result<()> {
    if probs.nrows() != terms.len() {
        return Err(Error::LengthMismatch {
            what: "distributions vs timesteps",
            left: probs.nrows(),
            right: terms.len(),
        });
    }
    let size = probs.ncols();
    for term in terms {
        let ids = term.target.iter().chain(term.penalties.iter().map(|(c, _)| c));
        for &id in ids {
            if id as usize >= size {
                return Err(Error::TokenOutOfRange { id, size });
            }
        }
    }
    Ok(())
}

#[inline]
fn clamp(p: f64, clamps: &mut usize) -> f64 {
    if p > CLAMP_MAX {
        *clamps += 1;
        CLAMP_MAX
    } else {
        p
    }
}

/// Evaluates the mean loss of `terms` under `probs`.
pub fn evaluate_terms(probs: ArrayView2<f64>, terms: &[StepTerms]) -> Result<LossValue> {
    check_alignment(&probs, terms)?;
    let mut total = 0.0;
    let mut clamps = 0;
    let mut zero_target = None;
    for (t, term) in terms.iter().enumerate() {
        let row = probs.row(t);
        if let Some(y) = term.target {
            let p = row[y as usize];
            if p <= 0.0 && zero_target.is_none() {
                zero_target = Some(t);
            }
            total -= p.ln();
        }
        for &(c, w) in &term.penalties {
            let p = clamp(row[c as usize], &mut clamps);
            total -= w * (-p).ln_1p();
        }
    }
    let n = terms.len().max(1) as f64;
    Ok(LossValue {
        loss: total / n,
        clamp_events: clamps,
        zero_target,
    })
}

/// Like [`evaluate_terms`] but also returns `dLoss/dlogits` (same shape as
/// `probs`). Fails on a non-finite loss term.
pub fn evaluate_terms_with_grad(
    probs: ArrayView2<f64>,
    terms: &[StepTerms],
) -> Result<(LossValue, Array2<f64>)> {
    check_alignment(&probs, terms)?;
    let n = terms.len().max(1) as f64;
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    let mut clamps = 0;
    for (t, term) in terms.iter().enumerate() {
        let row = probs.row(t);
        let mut g = grad.row_mut(t);
        if let Some(y) = term.target {
            let p = row[y as usize];
            let l = -p.ln();
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    timestep: t,
                    token: Some(y),
                });
            }
            total += l;
            // d(-log p_y)/dz = p - e_y
            g.scaled_add(1.0 / n, &row);
            g[y as usize] -= 1.0 / n;
        }
        for &(c, w) in &term.penalties {
            let p = clamp(row[c as usize], &mut clamps);
            let l = -w * (-p).ln_1p();
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    timestep: t,
                    token: Some(c),
                });
            }
            total += l;
            // d(-log(1 - p_c))/dz = p_c / (1 - p_c) · (e_c - p)
            let k = w * p / (1.0 - p) / n;
            g.scaled_add(-k, &row);
            g[c as usize] += k;
        }
    }
    Ok((
        LossValue {
            loss: total / n,
            clamp_events: clamps,
            zero_target: None,
        },
        grad,
    ))
}

fn check_target(dists: &DistributionSequence, target: &[TokenId]) -> Result<()> {
    if dists.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "distributions vs target",
            left: dists.len(),
            right: target.len(),
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of `target`.
pub fn likelihood_loss(dists: &DistributionSequence, target: &[TokenId]) -> Result<LossValue> {
    check_target(dists, target)?;
    let terms = build_terms(Some(target), &[], target.len());
    evaluate_terms(dists.view(), &terms)
}

/// Likelihood plus `alpha`-weighted unlikelihood over `cands`.
pub fn unlikelihood_loss(
    dists: &DistributionSequence,
    target: &[TokenId],
    cands: &CandidateSchedule,
    alpha: f64,
) -> Result<LossValue> {
    check_target(dists, target)?;
    if cands.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "candidates vs target",
            left: cands.len(),
            right: target.len(),
        });
    }
    let terms = build_terms(Some(target), &[(cands, alpha)], target.len());
    evaluate_terms(dists.view(), &terms)
}

/// Likelihood of `seq` plus `beta`-weighted unlikelihood of every token that
/// a blocklist phrase covers.
pub fn block_loss(
    dists: &DistributionSequence,
    seq: &[TokenId],
    automaton: &BlocklistAutomaton,
    beta: f64,
) -> Result<LossValue> {
    let cands = block_candidates(seq, automaton);
    unlikelihood_loss(dists, seq, &cands, beta)
}
