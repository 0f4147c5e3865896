//! Language-model, repetition, overlap, and blocklist metrics.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::BlocklistAutomaton;
use crate::decoding::{decode, strip_eos, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::{Example, ModelParams};
use crate::TokenId;

/// Default window for rep-l / wrep-l.
pub const REP_WINDOW: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ppl: f64,
    pub acc: f64,
    /// rep-l keyed by window length.
    pub rep: BTreeMap<usize, f64>,
    pub wrep: BTreeMap<usize, f64>,
    /// seq-rep-n keyed by n.
    pub seq_rep: BTreeMap<usize, f64>,
    pub uniq: usize,
    pub uniq_seq: usize,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub blocklist_output_count: Option<usize>,
    pub samples: usize,
}

/// Counts of predictions found in the previous `l` gold tokens (`rep`) and of
/// those that are also wrong (`wrep`). `preds[t]` predicts `gold[t]`.
pub fn rep_counts(gold: &[TokenId], preds: &[TokenId], l: usize) -> (usize, usize) {
    assert_eq!(gold.len(), preds.len(), "one prediction per gold token");
    let mut window: HashMap<TokenId, usize> = HashMap::new();
    let (mut rep, mut wrep) = (0, 0);
    for t in 0..gold.len() {
        if l > 0 && t > l {
            let out = gold[t - l - 1];
            let c = window.get_mut(&out).expect("token entered the window");
            *c -= 1;
            if *c == 0 {
                window.remove(&out);
            }
        }
        if t > 0 && l > 0 {
            *window.entry(gold[t - 1]).or_insert(0) += 1;
        }
        if window.contains_key(&preds[t]) {
            rep += 1;
            if preds[t] != gold[t] {
                wrep += 1;
            }
        }
    }
    (rep, wrep)
}

/// `1 - distinct/total` over the n-grams of `seq`; 0 when there are none.
pub fn seq_rep(seq: &[TokenId], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if seq.len() < n {
        return 0.0;
    }
    let grams: Vec<&[TokenId]> = seq.windows(n).collect();
    let distinct: HashSet<&[TokenId]> = grams.iter().copied().collect();
    1.0 - distinct.len() as f64 / grams.len() as f64
}

/// Number of distinct tokens across all outputs.
pub fn uniq_seq<S: AsRef<[TokenId]>>(outputs: &[S]) -> usize {
    outputs
        .iter()
        .flat_map(|o| o.as_ref().iter().copied())
        .collect::<HashSet<_>>()
        .len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn rouge_n(cand: &[TokenId], reference: &[TokenId], n: usize) -> f64 {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    f1(
        overlap,
        cand.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F1 of `cand` against `reference` on token ids.
pub fn rouge(cand: &[TokenId], reference: &[TokenId], variant: RougeVariant) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("ROUGE reference"));
    }
    Ok(match variant {
        RougeVariant::One => rouge_n(cand, reference, 1),
        RougeVariant::Two => rouge_n(cand, reference, 2),
        RougeVariant::L => f1(lcs_len(cand, reference), cand.len(), reference.len()),
    })
}

/// Number of outputs with at least one blocklist match.
pub fn blocklist_output_count<S: AsRef<[TokenId]>>(outputs: &[S], automaton: &BlocklistAutomaton) -> usize {
    outputs
        .iter()
        .filter(|o| automaton.is_match(o.as_ref()))
        .count()
}

/// Teacher-forced statistics over one example's target positions.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub preds: Vec<TokenId>,
    pub nll: Vec<f64>,
}

pub fn teacher_forced(params: &ModelParams, ex: &Example) -> Result<TeacherForced> {
    let full = ex.full();
    let probs = params.next_token_probs(&full[..full.len() - 1], ex.prompt.len() - 1)?;
    let mut preds = Vec::with_capacity(ex.target.len());
    let mut nll = Vec::with_capacity(ex.target.len());
    for (row, &y) in probs.rows().into_iter().zip(&ex.target) {
        let mut best = 0;
        for (i, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = i;
            }
        }
        preds.push(best as TokenId);
        nll.push(-row[y as usize].ln());
    }
    Ok(TeacherForced { preds, nll })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmMetrics {
    pub ppl: f64,
    pub mean_nll: f64,
    pub acc: f64,
    pub rep: BTreeMap<usize, f64>,
    pub wrep: BTreeMap<usize, f64>,
    pub uniq: usize,
    pub positions: usize,
}

/// Teacher-forced metrics over the targets (paragraph + EOS) of `examples`.
/// Ratios are pooled over all scored positions of the corpus.
pub fn lm_metrics(params: &ModelParams, examples: &[Example], windows: &[usize]) -> Result<LmMetrics> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    if let Some(&l) = windows.iter().find(|&&l| l > params.config.context_len) {
        return Err(Error::Config(format!(
            "rep window {l} exceeds context length {}",
            params.config.context_len
        )));
    }
    let passes: Vec<TeacherForced> = examples
        .par_iter()
        .map(|ex| teacher_forced(params, ex))
        .collect::<Result<_>>()?;
    let mut nll_sum = 0.0;
    let mut positions = 0;
    let mut correct = 0;
    let mut uniq = HashSet::new();
    let mut rep: BTreeMap<usize, (usize, usize)> = windows.iter().map(|&l| (l, (0, 0))).collect();
    for (ex, pass) in examples.iter().zip(&passes) {
        for &x in &pass.nll {
            nll_sum += x;
        }
        positions += pass.nll.len();
        correct += pass
            .preds
            .iter()
            .zip(&ex.target)
            .filter(|(p, g)| p == g)
            .count();
        uniq.extend(pass.preds.iter().copied());
        for (&l, acc) in rep.iter_mut() {
            let (r, w) = rep_counts(&ex.target, &pass.preds, l);
            acc.0 += r;
            acc.1 += w;
        }
    }
    let n = positions as f64;
    let mean_nll = nll_sum / n;
    Ok(LmMetrics {
        ppl: mean_nll.exp(),
        mean_nll,
        acc: correct as f64 / n,
        rep: rep.iter().map(|(&l, &(r, _))| (l, r as f64 / n)).collect(),
        wrep: rep.iter().map(|(&l, &(_, w))| (l, w as f64 / n)).collect(),
        uniq: uniq.len(),
        positions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationMetrics {
    pub seq_rep: BTreeMap<usize, f64>,
    pub uniq_seq: usize,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub blocklist_output_count: Option<usize>,
}

/// Metrics over free-running outputs (EOS already stripped). seq-rep and
/// ROUGE are means over outputs.
pub fn generation_metrics<S: AsRef<[TokenId]> + Sync>(
    outputs: &[S],
    references: &[S],
    orders: &[usize],
    automaton: Option<&BlocklistAutomaton>,
) -> Result<GenerationMetrics> {
    if outputs.is_empty() {
        return Err(Error::Empty("generated outputs"));
    }
    if outputs.len() != references.len() {
        return Err(Error::LengthMismatch {
            what: "outputs vs references",
            left: outputs.len(),
            right: references.len(),
        });
    }
    let n = outputs.len() as f64;
    let mean = |f: &dyn Fn(&[TokenId], &[TokenId]) -> Result<f64>| -> Result<f64> {
        let mut total = 0.0;
        for (o, r) in outputs.iter().zip(references) {
            total += f(o.as_ref(), r.as_ref())?;
        }
        Ok(total / n)
    };
    let mut seq = BTreeMap::new();
    for &k in orders {
        seq.insert(k, mean(&|o, _| Ok(seq_rep(o, k)))?);
    }
    Ok(GenerationMetrics {
        seq_rep: seq,
        uniq_seq: uniq_seq(outputs),
        rouge1_f: mean(&|o, r| rouge(o, r, RougeVariant::One))?,
        rouge2_f: mean(&|o, r| rouge(o, r, RougeVariant::Two))?,
        rouge_l_f: mean(&|o, r| rouge(o, r, RougeVariant::L))?,
        blocklist_output_count: automaton.map(|a| blocklist_output_count(outputs, a)),
    })
}

/// Decodes every example's prompt, EOS stripped. Parallel per example,
/// results in input order.
pub fn generate_all(params: &ModelParams, examples: &[Example], config: &DecodeConfig) -> Result<Vec<Vec<TokenId>>> {
    examples
        .par_iter()
        .map(|ex| decode(params, &ex.prompt, config).map(|o| strip_eos(&o).to_vec()))
        .collect()
}

/// Full evaluation: teacher-forced metrics plus metrics over generations.
/// Returns the report and the generated outputs.
pub fn evaluate(
    params: &ModelParams,
    examples: &[Example],
    decode_config: &DecodeConfig,
    automaton: Option<&BlocklistAutomaton>,
    windows: &[usize],
    orders: &[usize],
) -> Result<(MetricsReport, Vec<Vec<TokenId>>)> {
    let lm = lm_metrics(params, examples, windows)?;
    let outputs = generate_all(params, examples, decode_config)?;
    let references: Vec<Vec<TokenId>> = examples.iter().map(|e| e.paragraph().to_vec()).collect();
    let gen = generation_metrics(&outputs, &references, orders, automaton)?;
    Ok((
        MetricsReport {
            ppl: lm.ppl,
            acc: lm.acc,
            rep: lm.rep,
            wrep: lm.wrep,
            seq_rep: gen.seq_rep,
            uniq: lm.uniq,
            uniq_seq: gen.uniq_seq,
            rouge1_f: gen.rouge1_f,
            rouge2_f: gen.rouge2_f,
            rouge_l_f: gen.rouge_l_f,
            blocklist_output_count: gen.blocklist_output_count,
            samples: examples.len(),
        },
        outputs,
    ))
}

/// Aligned plain-text table, one row per named report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let mut header = vec!["model".to_string(), "ppl".into(), "acc".into()];
    let first = match rows.first() {
        Some((_, r)) => r,
        None => return String::new(),
    };
    for l in first.rep.keys() {
        header.push(format!("rep-{l}"));
        header.push(format!("wrep-{l}"));
    }
    for n in first.seq_rep.keys() {
        header.push(format!("seq-rep-{n}"));
    }
    header.extend(["uniq", "uniq-seq", "ROUGE1-F", "ROUGE2-F", "ROUGEL-F"].map(String::from));
    let with_block = rows.iter().any(|(_, r)| r.blocklist_output_count.is_some());
    if with_block {
        header.push("blocklist-outputs".into());
    }
    let mut table = vec![header];
    for (name, r) in rows {
        let mut row = vec![name.clone(), format!("{:.3}", r.ppl), format!("{:.3}", r.acc)];
        for (l, v) in &r.rep {
            row.push(format!("{v:.3}"));
            row.push(format!("{:.3}", r.wrep.get(l).copied().unwrap_or(f64::NAN)));
        }
        for v in r.seq_rep.values() {
            row.push(format!("{v:.3}"));
        }
        row.push(r.uniq.to_string());
        row.push(r.uniq_seq.to_string());
        row.push(format!("{:.3}", r.rouge1_f));
        row.push(format!("{:.3}", r.rouge2_f));
        row.push(format!("{:.3}", r.rouge_l_f));
        if with_block {
            row.push(r.blocklist_output_count.map_or("-".into(), |c| c.to_string()));
        }
        table.push(row);
    }
    align(&table)
}

/// Left-aligns the first column, right-aligns the rest.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rep_worked_example() {
        // gold [a,b,a,c], predictions [b,a,a,a], l = 2
        let (a, b, c) = (10, 11, 12);
        let (rep, wrep) = rep_counts(&[a, b, a, c], &[b, a, a, a], 2);
        assert_eq!((rep, wrep), (3, 2));
    }

    #[test]
    fn perfect_predictor_on_distinct_gold() {
        let gold = [4, 5, 6, 7];
        assert_eq!(rep_counts(&gold, &gold, 128), (0, 0));
    }

    #[test]
    fn window_zero_never_repeats() {
        assert_eq!(rep_counts(&[4, 4, 4], &[4, 4, 4], 0), (0, 0));
    }

    #[test]
    fn seq_rep_examples() {
        assert!((seq_rep(&[1, 2, 1], 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(seq_rep(&[1, 2, 3, 4], 2), 0.0);
        assert!((seq_rep(&[1, 2, 1, 2, 1, 2], 4) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(seq_rep(&[1, 2], 4), 0.0);
    }

    #[test]
    fn uniq_seq_examples() {
        assert_eq!(uniq_seq(&[vec![1, 2], vec![2, 3]]), 3);
        assert_eq!(uniq_seq::<Vec<TokenId>>(&[]), 0);
        assert_eq!(uniq_seq(&[vec![5, 5, 5]]), 1);
    }

    #[test]
    fn rouge_examples() {
        // "the cat sat" vs "the cat"
        let (the, cat, sat) = (4, 5, 6);
        let f = rouge(&[the, cat, sat], &[the, cat], RougeVariant::One).unwrap();
        assert!((f - 0.8).abs() < 1e-15);
        for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
            assert!((rouge(&[1, 2, 3], &[1, 2, 3], v).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(rouge(&[1, 2, 3], &[4, 5, 6], v).unwrap(), 0.0);
        }
        assert!(rouge(&[1], &[], RougeVariant::L).is_err());
        assert_eq!(rouge(&[1], &[1, 2], RougeVariant::Two).unwrap(), 0.0);
    }

    #[test]
    fn lcs_basic() {
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[2, 4, 3]), 2);
        assert_eq!(lcs_len(&[], &[1]), 0);
    }

    #[test]
    fn blocklist_counting() {
        let (auto, _) = crate::candidates::compile_blocklist(&[vec![7, 8]], 2, 10).unwrap();
        let outputs = vec![vec![7, 8, 1, 7, 8], vec![1, 2], vec![8, 7]];
        assert_eq!(blocklist_output_count(&outputs, &auto), 1);
        assert_eq!(blocklist_output_count(&[vec![1, 2]], &auto), 0);
    }

    #[test]
    fn table_has_paper_columns() {
        let report = MetricsReport {
            ppl: 4.0,
            acc: 0.5,
            rep: [(128, 0.5)].into_iter().collect(),
            wrep: [(128, 0.25)].into_iter().collect(),
            seq_rep: [(1, 0.1), (4, 0.0)].into_iter().collect(),
            uniq: 10,
            uniq_seq: 12,
            rouge1_f: 0.4,
            rouge2_f: 0.2,
            rouge_l_f: 0.3,
            blocklist_output_count: None,
            samples: 3,
        };
        let t = format_table(&[("baseline".into(), report.clone()), ("token_ul".into(), report)]);
        for col in ["ppl", "acc", "rep-128", "wrep-128", "seq-rep-1", "seq-rep-4", "uniq", "uniq-seq", "ROUGE1-F", "ROUGE2-F", "ROUGEL-F"] {
            assert!(t.lines().next().unwrap().split_whitespace().any(|c| c == col), "{col}");
        }
        assert_eq!(t.lines().count(), 3);
    }
}
