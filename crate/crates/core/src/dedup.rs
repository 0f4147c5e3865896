//! Post-hoc removal of near-duplicate sentences by embedding similarity.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{align, seq_rep};
use crate::tokenizer::{tokenize, Vocab};
use crate::TokenId;

/// Thresholds swept by default (strict `>` comparison).
pub const SWEEP_THRESHOLDS: [f64; 2] = [0.91, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepPolicy {
    #[default]
    First,
    Last,
}

/// Which earlier sentences can cause a drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    /// Dropped if similar to any earlier sentence, kept or not.
    #[default]
    AnyEarlier,
    /// Dropped only if similar to an earlier kept sentence. Not monotone in
    /// the threshold.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: f64,
    pub keep: KeepPolicy,
    pub linkage: Linkage,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: 0.91,
            keep: KeepPolicy::First,
            linkage: Linkage::AnyEarlier,
        }
    }
}

impl DedupConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        let c = Self {
            threshold,
            ..Self::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "dedup threshold {} not in [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end of
/// text. Whitespace after a terminator stays with its sentence, so the pieces
/// concatenate back to `text`.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        match chars.peek() {
            None => {}
            Some(&(_, n)) if n.is_whitespace() => {}
            _ => continue,
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = chars.peek() {
            if !n.is_whitespace() {
                break;
            }
            end = j + n.len_utf8();
            chars.next();
        }
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    pub index: usize,
    pub vector: Vec<f64>,
}

fn is_punct(token: &str) -> bool {
    token.chars().all(|c| matches!(c, '.' | ',' | '!' | '?'))
}

/// L2-normalized bag-of-tokens vector over `vocab`. Punctuation and
/// out-of-vocabulary tokens are ignored.
pub fn toy_embed(sentence: &str, vocab: &Vocab) -> Result<Vec<f64>> {
    let mut v = vec![0.0; vocab.len()];
    let mut any = false;
    for tok in tokenize(sentence, vocab.casefold()) {
        if is_punct(&tok) {
            continue;
        }
        if let Some(id) = vocab.id_of(&tok) {
            v[id as usize] += 1.0;
            any = true;
        }
    }
    if !any {
        return Err(Error::Empty("sentence has no in-vocabulary tokens"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroppedSentence {
    pub index: usize,
    /// Most similar sentence that caused the drop.
    pub partner: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    /// Kept sentence indices, ascending.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedSentence>,
}

fn check_embeddings(embeddings: &[Vec<f64>]) -> Result<()> {
    let Some(first) = embeddings.first() else {
        return Ok(());
    };
    for (i, e) in embeddings.iter().enumerate() {
        if e.len() != first.len() {
            return Err(Error::Dimension(first.len(), e.len()));
        }
        if let Some(bad) = e.iter().position(|x| !x.is_finite()) {
            return Err(Error::Line {
                line: i,
                reason: format!("non-finite embedding entry at {bad}"),
            });
        }
        if e.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector);
        }
    }
    Ok(())
}

/// Decides which sentences survive, given one embedding per sentence.
pub fn dedup_indices(embeddings: &[Vec<f64>], config: &DedupConfig) -> Result<DedupOutcome> {
    config.validate()?;
    check_embeddings(embeddings)?;
    let n = embeddings.len();
    let order: Vec<usize> = match config.keep {
        KeepPolicy::First => (0..n).collect(),
        KeepPolicy::Last => (0..n).rev().collect(),
    };
    let mut kept_flag = vec![false; n];
    let mut dropped = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &j in &order[..pos] {
            if config.linkage == Linkage::Greedy && !kept_flag[j] {
                continue;
            }
            let s = cosine(&embeddings[i], &embeddings[j])?;
            if s > config.threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        match best {
            Some((partner, similarity)) => dropped.push(DroppedSentence {
                index: i,
                partner,
                similarity,
            }),
            None => kept_flag[i] = true,
        }
    }
    dropped.sort_by_key(|d| d.index);
    Ok(DedupOutcome {
        kept: (0..n).filter(|&i| kept_flag[i]).collect(),
        dropped,
    })
}

/// Kept sentences in original order, plus the drop decisions.
pub fn dedup_paragraph<S: Clone>(
    sentences: &[S],
    embeddings: &[Vec<f64>],
    config: &DedupConfig,
) -> Result<(Vec<S>, DedupOutcome)> {
    if sentences.len() != embeddings.len() {
        return Err(Error::LengthMismatch {
            what: "sentences vs embeddings",
            left: sentences.len(),
            right: embeddings.len(),
        });
    }
    let outcome = dedup_indices(embeddings, config)?;
    let kept = outcome.kept.iter().map(|&i| sentences[i].clone()).collect();
    Ok((kept, outcome))
}

/// Parses `index dim v1 .. vdim` lines. Indices must cover `0..n` exactly
/// once; the result is ordered by index.
pub fn parse_embeddings(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut by_index: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_err = |reason: String| Error::Line {
            line: lineno + 1,
            reason,
        };
        let mut fields = line.split_whitespace();
        let Some(first) = fields.next() else {
            continue;
        };
        let index: usize = first
            .parse()
            .map_err(|_| line_err(format!("bad sentence index {first:?}")))?;
        let d: usize = fields
            .next()
            .ok_or_else(|| line_err("missing dimension".into()))?
            .parse()
            .map_err(|_| line_err("bad dimension".into()))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| line_err(format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != d {
            return Err(line_err(format!("expected {d} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(line_err("non-finite value".into()));
        }
        match dim {
            Some(prev) if prev != d => return Err(Error::Dimension(prev, d)),
            _ => dim = Some(d),
        }
        if by_index.insert(index, values).is_some() {
            return Err(line_err(format!("duplicate sentence index {index}")));
        }
    }
    for (expect, &index) in by_index.keys().enumerate() {
        if index != expect {
            return Err(Error::Record(format!("embedding for sentence {expect} missing")));
        }
    }
    Ok(by_index.into_values().collect())
}

pub fn load_embeddings(path: impl AsRef<std::path::Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

/// Where sentence vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Toy(&'a Vocab),
    /// Indexed by sentence position across the whole corpus, paragraphs in
    /// order, as produced by [`split_sentences`].
    Provided(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub paragraph: usize,
    pub sentence: usize,
    pub similarity: f64,
    pub partner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDedup {
    pub paragraphs: Vec<String>,
    pub drops: Vec<DropRecord>,
    pub sentences: usize,
}

fn dedup_one(
    paragraph: &str,
    vectors: Vec<Option<Vec<f64>>>,
    config: &DedupConfig,
) -> Result<(String, Vec<DropRecord>)> {
    let pieces = split_sentences(paragraph);
    // Sentences without a usable vector are kept and never compared.
    let usable: Vec<usize> = (0..pieces.len()).filter(|&i| vectors[i].is_some()).collect();
    let embs: Vec<Vec<f64>> = vectors.into_iter().flatten().collect();
    let outcome = dedup_indices(&embs, config)?;
    let mut keep = vec![true; pieces.len()];
    let drops = outcome
        .dropped
        .iter()
        .map(|d| {
            keep[usable[d.index]] = false;
            DropRecord {
                paragraph: 0,
                sentence: usable[d.index],
                similarity: d.similarity,
                partner: usable[d.partner],
            }
        })
        .collect();
    let text: String = pieces
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    Ok((text.trim_end().to_string(), drops))
}

/// Dedups every paragraph independently (in parallel, results in order).
pub fn dedup_corpus<S: AsRef<str> + Sync>(
    paragraphs: &[S],
    source: EmbeddingSource<'_>,
    config: &DedupConfig,
) -> Result<CorpusDedup> {
    config.validate()?;
    let counts: Vec<usize> = paragraphs
        .iter()
        .map(|p| split_sentences(p.as_ref()).len())
        .collect();
    let total: usize = counts.iter().sum();
    if let EmbeddingSource::Provided(e) = source {
        if e.len() != total {
            return Err(Error::LengthMismatch {
                what: "corpus sentences vs embeddings",
                left: total,
                right: e.len(),
            });
        }
    }
    let offsets: Vec<usize> = counts
        .iter()
        .scan(0, |acc, &c| {
            let o = *acc;
            *acc += c;
            Some(o)
        })
        .collect();
    let results: Vec<(String, Vec<DropRecord>)> = paragraphs
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let vectors = split_sentences(p.as_ref())
                .iter()
                .enumerate()
                .map(|(si, s)| match source {
                    EmbeddingSource::Toy(vocab) => toy_embed(s, vocab).ok(),
                    EmbeddingSource::Provided(e) => Some(e[offsets[pi] + si].clone()),
                })
                .collect();
            let (text, mut drops) = dedup_one(p.as_ref(), vectors, config)?;
            drops.iter_mut().for_each(|d| d.paragraph = pi);
            Ok((text, drops))
        })
        .collect::<Result<_>>()?;
    let mut out = CorpusDedup {
        paragraphs: Vec::with_capacity(results.len()),
        drops: Vec::new(),
        sentences: total,
    };
    for (text, drops) in results {
        out.paragraphs.push(text);
        out.drops.extend(drops);
    }
    Ok(out)
}

/// One row of a threshold sweep; `threshold` is `None` for the untouched
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: Option<f64>,
    pub sentences: usize,
    pub dropped: usize,
    pub seq_rep_1: f64,
    pub seq_rep_4: f64,
}

fn mean_seq_rep(paragraphs: &[String], vocab: &Vocab, n: usize) -> f64 {
    if paragraphs.is_empty() {
        return 0.0;
    }
    let total: f64 = paragraphs
        .iter()
        .map(|p| {
            let ids: Vec<TokenId> = vocab.encode(p).into_inner();
            seq_rep(&ids, n)
        })
        .sum();
    total / paragraphs.len() as f64
}

/// Repetition statistics before and after dedup at each threshold.
pub fn threshold_sweep<S: AsRef<str> + Sync>(
    paragraphs: &[S],
    source: EmbeddingSource<'_>,
    vocab: &Vocab,
    thresholds: &[f64],
    keep: KeepPolicy,
) -> Result<Vec<SweepRow>> {
    let original: Vec<String> = paragraphs.iter().map(|p| p.as_ref().to_string()).collect();
    let sentences = original.iter().map(|p| split_sentences(p).len()).sum();
    let mut rows = vec![SweepRow {
        threshold: None,
        sentences,
        dropped: 0,
        seq_rep_1: mean_seq_rep(&original, vocab, 1),
        seq_rep_4: mean_seq_rep(&original, vocab, 4),
    }];
    for &threshold in thresholds {
        let config = DedupConfig {
            threshold,
            keep,
            linkage: Linkage::AnyEarlier,
        };
        let out = dedup_corpus(paragraphs, source, &config)?;
        rows.push(SweepRow {
            threshold: Some(threshold),
            sentences: out.sentences - out.drops.len(),
            dropped: out.drops.len(),
            seq_rep_1: mean_seq_rep(&out.paragraphs, vocab, 1),
            seq_rep_4: mean_seq_rep(&out.paragraphs, vocab, 4),
        });
    }
    Ok(rows)
}

pub fn format_sweep(label: &str, rows: &[SweepRow]) -> String {
    let mut table = vec![["model", "threshold", "sentences", "dropped", "seq-rep-1", "seq-rep-4"]
        .map(String::from)
        .to_vec()];
    for r in rows {
        let name = match r.threshold {
            None => label.to_string(),
            Some(_) => format!("{label} + dedup"),
        };
        table.push(vec![
            name,
            r.threshold.map_or("-".into(), |t| format!("{t}")),
            r.sentences.to_string(),
            r.dropped.to_string(),
            format!("{:.3}", r.seq_rep_1),
            format!("{:.3}", r.seq_rep_4),
        ]);
    }
    align(&table)
}
