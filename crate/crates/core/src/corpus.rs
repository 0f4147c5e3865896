//! Outline → paragraph samples: parsing, loading, and a synthetic generator.
//!
//! Records are one JSON object per line with the fields `bullet_points` and
//! `paragraph`. Bullets in the outline are marked with `*`, sub-bullets
//! with `**`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub bullet_points: String,
    pub paragraph: String,
}

impl CorpusSample {
    pub fn new(bullet_points: impl Into<String>, paragraph: impl Into<String>) -> Result<Self> {
        let sample = CorpusSample {
            bullet_points: bullet_points.into(),
            paragraph: paragraph.into(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bullet_points.trim().is_empty() {
            return Err(Error::Record("empty field `bullet_points`".into()));
        }
        if self.paragraph.trim().is_empty() {
            return Err(Error::Record("empty field `paragraph`".into()));
        }
        if !self.bullet_points.contains('*') {
            return Err(Error::Record("`bullet_points` has no `*` marker".into()));
        }
        Ok(())
    }

    /// Serializes as a single corpus line (without the trailing newline).
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("string fields always serialize")
    }
}

/// Parses one corpus record. Field contents are kept verbatim.
pub fn parse_sample(record: &str) -> Result<CorpusSample> {
    let value: serde_json::Value =
        serde_json::from_str(record).map_err(|e| Error::Record(format!("not a JSON object: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Record("not a JSON object".into()))?;
    let field = |name: &str| -> Result<String> {
        match obj.get(name) {
            None => Err(Error::Record(format!("missing field `{name}`"))),
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::Record(format!("field `{name}` is not text"))),
        }
    };
    let sample = CorpusSample {
        bullet_points: field("bullet_points")?,
        paragraph: field("paragraph")?,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub samples: Vec<CorpusSample>,
    pub rejected: Vec<RejectedLine>,
}

/// Loads a newline-delimited corpus file. Blank lines are skipped.
///
/// With `strict` set the first malformed line aborts the load; otherwise it
/// is recorded in [`LoadedCorpus::rejected`] and loading continues.
pub fn load_corpus(path: impl AsRef<Path>, strict: bool) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, strict)
}

pub fn parse_corpus(text: &str, strict: bool) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_sample(line) {
            Ok(s) => out.samples.push(s),
            Err(e) if strict => {
                return Err(Error::Line {
                    line: idx + 1,
                    reason: e.to_string(),
                })
            }
            Err(e) => out.rejected.push(RejectedLine {
                line: idx + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[CorpusSample]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_string(samples)).map_err(|e| Error::io(path, e))
}

pub fn corpus_to_string(samples: &[CorpusSample]) -> String {
    let mut buf = String::new();
    for s in samples {
        buf.push_str(&s.to_record());
        buf.push('\n');
    }
    buf
}

/// Parses blocklist text: one phrase per line, `#` starts a comment line,
/// blank lines and repeated phrases are ignored. Order of first appearance
/// is kept.
pub fn parse_blocklist(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    for line in text.lines() {
        let phrase = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if phrase.is_empty() || phrase.starts_with('#') {
            continue;
        }
        if seen.insert(phrase.clone()) {
            phrases.push(phrase);
        }
    }
    phrases
}

pub fn load_blocklist(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_blocklist(&text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_samples: usize,
    /// Size of the closed word list (punctuation and bullet markers excluded).
    pub vocab_size: usize,
    /// Paragraphs grow sentence by sentence until they reach this many tokens.
    pub target_len: usize,
    pub repeat_rate: f64,
    pub blocklist_plant_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_samples: 1000,
            vocab_size: 120,
            target_len: 40,
            repeat_rate: 0.5,
            blocklist_plant_rate: 0.0,
            seed: 1,
        }
    }
}

pub const MIN_SENTENCE_TOKENS: usize = 5;
pub const MAX_SENTENCE_TOKENS: usize = 12;
const MIN_SYNTH_WORDS: usize = 16;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        if self.vocab_size < MIN_SYNTH_WORDS {
            return Err(Error::Config(format!(
                "vocab_size must be at least {MIN_SYNTH_WORDS}"
            )));
        }
        if self.target_len < MIN_SENTENCE_TOKENS {
            return Err(Error::Config(format!(
                "target_len must be at least {MIN_SENTENCE_TOKENS}"
            )));
        }
        for (name, p) in [
            ("repeat_rate", self.repeat_rate),
            ("blocklist_plant_rate", self.blocklist_plant_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 12] = [
    "ba", "ko", "ri", "mu", "te", "lo", "si", "na", "pe", "du", "gi", "fa",
];

/// The closed word list used by [`synth_corpus`]. Word `i` is spelled from
/// the base-12 digits of `i`, so every word is distinct and lowercase.
pub fn synthetic_lexicon(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            let mut w = String::new();
            let mut rest = i;
            w.push_str(SYLLABLES[rest % 12]);
            rest /= 12;
            w.push_str(SYLLABLES[rest % 12]);
            rest /= 12;
            while rest > 0 {
                w.push_str(SYLLABLES[rest % 12]);
                rest /= 12;
            }
            w
        })
        .collect()
}

/// `count` two-word phrases built from the tail of the synthetic lexicon.
pub fn default_blocklist(config: &SynthConfig, count: usize) -> Result<Vec<String>> {
    if 2 * count + MIN_SYNTH_WORDS / 2 > config.vocab_size {
        return Err(Error::Config(format!(
            "vocab_size {} too small for {count} blocklist phrases",
            config.vocab_size
        )));
    }
    let lex = synthetic_lexicon(config.vocab_size);
    let tail = &lex[config.vocab_size - 2 * count..];
    Ok(tail.chunks(2).map(|c| c.join(" ")).collect())
}

const SUCCESSOR_WEIGHTS: [f64; 3] = [0.6, 0.25, 0.15];

/// First-order word chain shared by every paragraph of a synthetic corpus.
struct Grammar {
    words: Vec<String>,
    successors: Vec<[usize; 3]>,
}

impl Grammar {
    fn new(words: Vec<String>, rng: &mut impl Rng) -> Self {
        let n = words.len();
        let successors = (0..n)
            .map(|i| {
                let mut picks = [0usize; 3];
                let mut k = 0;
                while k < 3 {
                    let j = rng.random_range(0..n);
                    if j != i && !picks[..k].contains(&j) {
                        picks[k] = j;
                        k += 1;
                    }
                }
                picks
            })
            .collect();
        Grammar { words, successors }
    }

    fn next(&self, word: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in SUCCESSOR_WEIGHTS.iter().enumerate() {
            acc += w;
            if u < acc {
                return self.successors[word][k];
            }
        }
        self.successors[word][2]
    }

    /// Continues a chain from `start` for `len` words (start excluded).
    fn chain(&self, start: usize, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut cur = start;
        for _ in 0..len {
            cur = self.next(cur, rng);
            out.push(cur);
        }
        out
    }
}

struct Sentence {
    words: Vec<String>,
    /// Length of the blocklist phrase opening the sentence, 0 if none.
    planted: usize,
}

/// Generates a synthetic outline → paragraph corpus.
///
/// Each paragraph is a run of sentences of 5–12 tokens (final `.` included),
/// every sentence opening with a distinct head word that also appears in the
/// outline. With probability `repeat_rate` one sentence is duplicated later
/// in the paragraph; with probability `blocklist_plant_rate` a sentence that
/// opens with a blocklist phrase is inserted and that phrase is listed as a
/// bullet. Blocklist words are withheld from the word chain, so they only
/// ever occur where planted.
pub fn synth_corpus(config: &SynthConfig, blocklist: &[String]) -> Result<Vec<CorpusSample>> {
    config.validate()?;
    let lexicon = synthetic_lexicon(config.vocab_size);
    let lex_set: HashSet<&str> = lexicon.iter().map(String::as_str).collect();

    let mut phrases: Vec<Vec<String>> = Vec::new();
    let mut reserved: HashSet<String> = HashSet::new();
    for phrase in blocklist {
        let words: Vec<String> = phrase.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            continue;
        }
        if words.len() > MAX_SENTENCE_TOKENS - 2 {
            return Err(Error::Config(format!("blocklist phrase too long: {phrase:?}")));
        }
        for w in &words {
            if !lex_set.contains(w.as_str()) {
                return Err(Error::Config(format!(
                    "blocklist word {w:?} is not in the synthetic vocabulary"
                )));
            }
            reserved.insert(w.clone());
        }
        phrases.push(words);
    }
    if config.blocklist_plant_rate > 0.0 && phrases.is_empty() {
        return Err(Error::Config(
            "blocklist_plant_rate > 0 requires a non-empty blocklist".into(),
        ));
    }
    let grammar_words: Vec<String> = lexicon
        .into_iter()
        .filter(|w| !reserved.contains(w))
        .collect();
    let max_sentences = config.target_len.div_ceil(MIN_SENTENCE_TOKENS) + 1;
    if grammar_words.len() < max_sentences.max(MIN_SYNTH_WORDS / 2) {
        return Err(Error::Config(format!(
            "only {} words left for the word chain; need {}",
            grammar_words.len(),
            max_sentences.max(MIN_SYNTH_WORDS / 2)
        )));
    }

    let grammar = Grammar::new(grammar_words, &mut rng::substream(config.seed, "synth-grammar"));
    let mut rng = rng::substream(config.seed, "synth-samples");
    let mut heads: Vec<usize> = (0..grammar.words.len()).collect();
    let mut samples = Vec::with_capacity(config.num_samples);

    for _ in 0..config.num_samples {
        heads.shuffle(&mut rng);
        let mut sentences: Vec<Sentence> = Vec::new();
        let mut total = 0;
        let mut next_head = 0;
        while total < config.target_len {
            let len = rng.random_range(MIN_SENTENCE_TOKENS..=MAX_SENTENCE_TOKENS);
            let head = heads[next_head];
            next_head += 1;
            let mut words = vec![head];
            words.extend(grammar.chain(head, len - 2, &mut rng));
            total += len;
            sentences.push(Sentence {
                words: words.iter().map(|&i| grammar.words[i].clone()).collect(),
                planted: 0,
            });
        }

        if rng.random::<f64>() < config.blocklist_plant_rate {
            let phrase = &phrases[rng.random_range(0..phrases.len())];
            let min_len = MIN_SENTENCE_TOKENS.max(phrase.len() + 2);
            let len = rng.random_range(min_len..=MAX_SENTENCE_TOKENS);
            let start = heads[next_head];
            let mut words = phrase.clone();
            words.extend(
                grammar
                    .chain(start, len - 1 - phrase.len(), &mut rng)
                    .into_iter()
                    .map(|i| grammar.words[i].clone()),
            );
            let at = rng.random_range(0..=sentences.len());
            sentences.insert(
                at,
                Sentence {
                    words,
                    planted: phrase.len(),
                },
            );
        }

        let bullet_points = sentences
            .iter()
            .map(|s| {
                if s.planted > 0 {
                    return format!("* {}", s.words[..s.planted].join(" "));
                }
                let mut b = format!("* {} {}", s.words[0], s.words[1]);
                if s.words.len() >= 8 {
                    b.push_str(&format!(" ** {} {}", s.words[2], s.words[3]));
                }
                b
            })
            .collect::<Vec<_>>()
            .join(" ");

        if rng.random::<f64>() < config.repeat_rate {
            let candidates: Vec<usize> = (0..sentences.len())
                .filter(|&i| sentences[i].planted == 0)
                .collect();
            let src = candidates[rng.random_range(0..candidates.len())];
            let dst = rng.random_range(src + 1..=sentences.len());
            let copy = Sentence {
                words: sentences[src].words.clone(),
                planted: 0,
            };
            sentences.insert(dst, copy);
        }

        let paragraph = sentences
            .iter()
            .map(|s| format!("{} .", s.words.join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        samples.push(CorpusSample {
            bullet_points,
            paragraph,
        });
    }
    Ok(samples)
}

/// Splits off the last `fraction` of a corpus as a held-out set.
pub fn split_heldout(
    mut samples: Vec<CorpusSample>,
    fraction: f64,
) -> (Vec<CorpusSample>, Vec<CorpusSample>) {
    let n_held = ((samples.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let held = samples.split_off(samples.len() - n_held);
    (samples, held)
}
