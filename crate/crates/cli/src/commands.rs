use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ulkit::candidates::{compile_blocklist, BlocklistAutomaton};
use ulkit::corpus::{
    default_blocklist, load_blocklist, load_corpus, split_heldout, synth_corpus, write_corpus, CorpusSample,
    SynthConfig,
};
use ulkit::decoding::{DecodeConfig, Strategy};
use ulkit::dedup::{
    dedup_corpus, format_sweep, load_embeddings, threshold_sweep, DedupConfig, EmbeddingSource, KeepPolicy,
    Linkage,
};
use ulkit::metrics::{align, evaluate, format_table, generate_all, MetricsReport};
use ulkit::model::{
    encode_example, load_checkpoint, save_checkpoint, train, Checkpoint, Example, ModelConfig, Objective, TokenBase,
    TrainPlan,
};
use ulkit::objectives::ObjectiveConfig;
use ulkit::perf::{run_bench, BenchConfig, BenchReport};
use ulkit::tokenizer::{build_vocab, build_vocab_from_texts, Vocab, UNK};
use ulkit::TokenId;

use crate::args::*;
use crate::manifest::{manifest_path, sibling, RunManifest};
use crate::UsageError;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn load_samples(input: &CorpusArgs) -> Result<Vec<CorpusSample>> {
    let loaded = load_corpus(&input.corpus, input.strict)
        .with_context(|| format!("loading corpus {}", input.corpus.display()))?;
    for r in &loaded.rejected {
        eprintln!("warning: {}:{}: skipped: {}", input.corpus.display(), r.line, r.reason);
    }
    if loaded.samples.is_empty() {
        bail!("corpus {} has no valid samples", input.corpus.display());
    }
    Ok(loaded.samples)
}

fn block_bounds(n_min: usize, n_max: usize, allow_unigram: bool) -> Result<(usize, usize)> {
    if n_min < 2 && !allow_unigram {
        return Err(UsageError(format!("block phrase length {n_min} < 2 needs --allow-unigram-blocks")).into());
    }
    if n_min == 0 || n_min > n_max {
        return Err(UsageError(format!("invalid block phrase length range [{n_min}, {n_max}]")).into());
    }
    Ok((n_min, n_max))
}

/// Encodes blocklist phrases with `vocab` and compiles them. Phrases with
/// unknown words or out-of-range lengths are skipped with a warning.
pub fn compile_phrases(
    phrases: &[String],
    vocab: &Vocab,
    (n_min, n_max): (usize, usize),
) -> Result<BlocklistAutomaton> {
    let mut encoded = Vec::new();
    let mut kept_text = Vec::new();
    for p in phrases {
        let ids = vocab.encode(p).into_inner();
        if ids.contains(&UNK) {
            eprintln!("warning: blocklist phrase {p:?} has words outside the vocabulary; skipped");
            continue;
        }
        encoded.push(ids);
        kept_text.push(p);
    }
    let (auto, dropped) = compile_blocklist(&encoded, n_min, n_max)?;
    for d in dropped {
        eprintln!(
            "warning: blocklist phrase {:?} has {} tokens, outside [{n_min}, {n_max}]; skipped",
            kept_text[d.index], d.len
        );
    }
    Ok(auto)
}

fn decode_config(args: &DecodeArgs) -> DecodeConfig {
    DecodeConfig {
        strategy: match args.strategy {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Beam => Strategy::Beam,
        },
        beam_size: args.beam,
        max_len: args.max_len,
    }
}

fn objective(arg: ObjectiveArg) -> Objective {
    match arg {
        ObjectiveArg::Mle => Objective::Mle,
        ObjectiveArg::TokenUl => Objective::TokenUl,
        ObjectiveArg::SeqUl => Objective::SeqUl,
        ObjectiveArg::SeqUlBlock => Objective::SeqUlBlock,
    }
}

fn examples(samples: &[CorpusSample], vocab: &Vocab, context_len: usize) -> Vec<Example> {
    samples.iter().map(|s| encode_example(s, vocab, context_len)).collect()
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    if !(0.0..=1.0).contains(&args.heldout_fraction) {
        return Err(UsageError("--heldout-fraction must lie in [0, 1]".into()).into());
    }
    let config = SynthConfig {
        num_samples: args.num_samples,
        vocab_size: args.vocab_size,
        target_len: args.target_len,
        repeat_rate: args.repeat_rate,
        blocklist_plant_rate: args.blocklist_plant_rate,
        seed: args.seed,
    };
    let blocklist = if args.blocklist_size > 0 {
        default_blocklist(&config, args.blocklist_size)?
    } else {
        Vec::new()
    };
    let samples = synth_corpus(&config, &blocklist)?;
    let (train_set, held) = split_heldout(samples, args.heldout_fraction);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let train_path = args.out.join("train.jsonl");
    let held_path = args.out.join("heldout.jsonl");
    write_corpus(&train_path, &train_set)?;
    write_corpus(&held_path, &held)?;
    let mut manifest = RunManifest::new("synth", args, Some(args.seed));
    manifest.outputs = vec![train_path, held_path];
    if !blocklist.is_empty() {
        let path = args.out.join("blocklist.txt");
        write_text(&path, &(blocklist.join("\n") + "\n"))?;
        manifest.outputs.push(path);
    }
    println!(
        "wrote {} training and {} held-out samples to {}",
        train_set.len(),
        held.len(),
        args.out.display()
    );
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("manifest.json"))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let samples = load_samples(&args.input)?;
    let objective = objective(args.objective);
    let bounds = block_bounds(args.block_n_min, args.block_n_max, args.allow_unigram_blocks)?;
    let (vocab, init, lineage) = match &args.init_from {
        Some(path) => {
            let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            (ckpt.vocab, Some(ckpt.params), ckpt.objective)
        }
        None => (build_vocab(&samples, args.max_vocab, args.casefold)?, None, None),
    };
    let model = match &init {
        Some(p) => p.config.clone(),
        None => ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: args.embed_dim,
            ffn_dim: args.ffn_dim,
            context_len: args.context_len,
            num_blocks: args.num_blocks,
            seed: args.seed,
        },
    };
    let automaton = match (&args.blocklist, objective) {
        (Some(path), Objective::SeqUlBlock) => Some(compile_phrases(&load_blocklist(path)?, &vocab, bounds)?),
        (None, Objective::SeqUlBlock) => {
            return Err(UsageError("--objective seq_ul_block requires --blocklist".into()).into())
        }
        (Some(_), other) => {
            return Err(UsageError(format!("--blocklist is only used by seq_ul_block, not {}", other.name())).into())
        }
        (None, _) => None,
    };
    let data = examples(&samples, &vocab, model.context_len);
    let mut plan = TrainPlan::new(objective, model);
    plan.objective_config = ObjectiveConfig {
        alpha: args.alpha,
        beta: args.beta,
        seq_ngram: args.seq_ngram,
        mix_prob: args.mix_prob,
        block_n_min: bounds.0,
        block_n_max: bounds.1,
    };
    plan.epochs = args.epochs;
    plan.batch_size = args.batch_size;
    plan.learning_rate = args.lr;
    plan.clip_norm = args.clip_norm;
    plan.seed = args.seed;
    plan.token_base = args.token_base.map(|b| match b {
        TokenBaseArg::Mle => TokenBase::Mle,
        TokenBaseArg::TokenUl => TokenBase::TokenUl,
    });
    plan.seq_prefix_len = args.seq_prefix_len;
    plan.continuation_len = args.continuation_len;
    plan.block_with_repetition = !args.block_only;
    plan.init_from = init;
    plan.init_lineage = lineage;

    let (params, log) = train(&data, &plan, automaton.as_ref())?;
    let ckpt = Checkpoint {
        params,
        objective: Some(objective),
        vocab,
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&args.out, &ckpt)?;
    let log_path = sibling(&args.out, "log.ndjson");
    write_text(&log_path, &log.to_ndjson())?;

    let mut rows = vec![vec!["step kind".to_string(), "steps".into(), "s/100 steps".into()]];
    for (kind, (_, n)) in &log.time_by_kind {
        rows.push(vec![
            kind.name().to_string(),
            n.to_string(),
            format!("{:.3}", log.secs_per_100(*kind).unwrap_or(0.0)),
        ]);
    }
    print!("{}", align(&rows));
    if let Some(last) = log.records.last() {
        println!("final loss {:.4} after {} steps", last.loss, last.step);
    }

    let mut manifest = RunManifest::new("train", args, Some(args.seed));
    manifest.inputs = [Some(args.input.corpus.clone()), args.init_from.clone(), args.blocklist.clone()]
        .into_iter()
        .flatten()
        .collect();
    manifest.outputs = vec![args.out.clone(), log_path];
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let started = Instant::now();
    let samples = load_samples(&args.input)?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let config = decode_config(&args.decode);
    config.validate()?;
    let data = examples(&samples, &ckpt.vocab, ckpt.params.config.context_len);
    let outputs = generate_all(&ckpt.params, &data, &config)?;
    let generated: Vec<CorpusSample> = samples
        .iter()
        .zip(&outputs)
        .map(|(s, o)| {
            Ok(CorpusSample {
                bullet_points: s.bullet_points.clone(),
                paragraph: ckpt.vocab.decode(o)?,
            })
        })
        .collect::<Result<_>>()?;
    write_text(&args.out, &ulkit::corpus::corpus_to_string(&generated))?;
    println!("wrote {} generations to {}", generated.len(), args.out.display());
    let mut manifest = RunManifest::new("generate", args, None);
    manifest.inputs = vec![args.input.corpus.clone(), args.checkpoint.clone()];
    manifest.outputs = vec![args.out.clone()];
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))
}

#[derive(Debug, Serialize)]
struct NamedReport {
    name: String,
    checkpoint: PathBuf,
    report: MetricsReport,
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let samples = load_samples(&args.input)?;
    let config = decode_config(&args.decode);
    config.validate()?;
    if args.seq_rep.contains(&0) {
        return Err(UsageError("--seq-rep orders must be positive".into()).into());
    }
    let phrases = args.blocklist.as_ref().map(load_blocklist).transpose()?;
    let bounds = block_bounds(if args.allow_unigram_blocks { 1 } else { 2 }, 10, args.allow_unigram_blocks)?;
    let mut reports = Vec::new();
    for path in &args.checkpoint {
        let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        let data = examples(&samples, &ckpt.vocab, ckpt.params.config.context_len);
        let automaton = phrases.as_ref().map(|p| compile_phrases(p, &ckpt.vocab, bounds)).transpose()?;
        let (report, _) = evaluate(&ckpt.params, &data, &config, automaton.as_ref(), &args.rep_window, &args.seq_rep)
            .with_context(|| format!("evaluating {}", path.display()))?;
        reports.push(NamedReport {
            name: model_name(path),
            checkpoint: path.clone(),
            report,
        });
    }
    let rows: Vec<(String, MetricsReport)> = reports.iter().map(|r| (r.name.clone(), r.report.clone())).collect();
    let table = format_table(&rows);
    print!("{table}");
    write_json(&args.out, &reports)?;
    let table_path = sibling(&args.out, "txt");
    write_text(&table_path, &table)?;
    let mut manifest = RunManifest::new("evaluate", args, None);
    manifest.inputs = std::iter::once(args.input.corpus.clone())
        .chain(args.checkpoint.iter().cloned())
        .chain(args.blocklist.clone())
        .collect();
    manifest.outputs = vec![args.out.clone(), table_path];
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))
}

pub fn cmd_dedup(args: &DedupArgs) -> Result<()> {
    let started = Instant::now();
    let samples = load_samples(&args.input)?;
    let config = DedupConfig {
        threshold: args.threshold,
        keep: match args.keep {
            KeepArg::First => KeepPolicy::First,
            KeepArg::Last => KeepPolicy::Last,
        },
        linkage: match args.linkage {
            LinkageArg::AnyEarlier => Linkage::AnyEarlier,
            LinkageArg::Greedy => Linkage::Greedy,
        },
    };
    config.validate()?;
    for &t in &args.sweep {
        DedupConfig::new(t)?;
    }
    let paragraphs: Vec<&str> = samples.iter().map(|s| s.paragraph.as_str()).collect();
    let vocab = build_vocab_from_texts(paragraphs.iter().copied(), usize::MAX, args.casefold)?;
    let provided = args.embeddings.as_ref().map(load_embeddings).transpose()?;
    let source = match &provided {
        Some(e) => EmbeddingSource::Provided(e),
        None => EmbeddingSource::Toy(&vocab),
    };
    let out = dedup_corpus(&paragraphs, source, &config)?;
    let deduped: Vec<CorpusSample> = samples
        .iter()
        .zip(&out.paragraphs)
        .map(|(s, p)| CorpusSample {
            bullet_points: s.bullet_points.clone(),
            paragraph: p.clone(),
        })
        .collect();
    write_text(&args.out, &ulkit::corpus::corpus_to_string(&deduped))?;
    let drops_path = sibling(&args.out, "drops.jsonl");
    write_jsonl(&drops_path, &out.drops)?;
    println!(
        "threshold {}: dropped {} of {} sentences",
        config.threshold,
        out.drops.len(),
        out.sentences
    );
    let mut manifest = RunManifest::new("dedup", args, None);
    manifest.inputs = std::iter::once(args.input.corpus.clone()).chain(args.embeddings.clone()).collect();
    manifest.outputs = vec![args.out.clone(), drops_path];
    if !args.sweep.is_empty() {
        let rows = threshold_sweep(&paragraphs, source, &vocab, &args.sweep, config.keep)?;
        let table = format_sweep(&model_name(&args.input.corpus), &rows);
        print!("{table}");
        let sweep_path = sibling(&args.out, "sweep.json");
        write_json(&sweep_path, &rows)?;
        let table_path = sibling(&args.out, "sweep.txt");
        write_text(&table_path, &table)?;
        manifest.outputs.extend([sweep_path, table_path]);
    }
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ScanMatch {
    pub sample: usize,
    /// Token offset within the tokenized paragraph.
    pub start: usize,
    pub len: usize,
    pub phrase: String,
}

/// Vocabulary covering the paragraphs and every blocklist word.
pub fn scan_vocab(samples: &[CorpusSample], phrases: &[String], casefold: bool) -> Result<Vocab> {
    let texts = samples
        .iter()
        .map(|s| s.paragraph.as_str())
        .chain(phrases.iter().map(String::as_str));
    Ok(build_vocab_from_texts(texts, usize::MAX, casefold)?)
}

pub fn cmd_scan(args: &ScanArgs) -> Result<()> {
    let started = Instant::now();
    let samples = load_samples(&args.input)?;
    let phrases = load_blocklist(&args.blocklist)?;
    if phrases.is_empty() {
        bail!("blocklist {} is empty", args.blocklist.display());
    }
    let bounds = block_bounds(if args.allow_unigram_blocks { 1 } else { 2 }, 10, args.allow_unigram_blocks)?;
    let vocab = scan_vocab(&samples, &phrases, args.casefold)?;
    let automaton = compile_phrases(&phrases, &vocab, bounds)?;
    let mut matches = Vec::new();
    let mut hit_samples = 0;
    for (i, s) in samples.iter().enumerate() {
        let ids: Vec<TokenId> = vocab.encode(&s.paragraph).into_inner();
        let found = automaton.find_overlapping(&ids);
        hit_samples += usize::from(!found.is_empty());
        for m in found {
            matches.push(ScanMatch {
                sample: i,
                start: m.start,
                len: m.len,
                phrase: vocab.decode(&automaton.phrases()[m.phrase])?,
            });
        }
    }
    write_jsonl(&args.out, &matches)?;
    println!(
        "{} matches in {} of {} samples",
        matches.len(),
        hit_samples,
        samples.len()
    );
    let mut manifest = RunManifest::new("scan", args, None);
    manifest.inputs = vec![args.input.corpus.clone(), args.blocklist.clone()];
    manifest.outputs = vec![args.out.clone()];
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))
}

pub fn bench_table(report: &BenchReport) -> String {
    let rows = vec![
        vec!["path".to_string(), "seconds".into(), "relative".into()],
        vec!["naive scan".into(), format!("{:.6}", report.naive_secs), format!("{:.1}x", report.speedup)],
        vec!["automaton".into(), format!("{:.6}", report.automaton_secs), "1.0x".into()],
        vec!["automaton compile".into(), format!("{:.6}", report.compile_secs), "-".into()],
        vec!["seq-level n-grams".into(), format!("{:.6}", report.seq_level_secs), "-".into()],
    ];
    align(&rows)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let started = Instant::now();
    let config = BenchConfig {
        stream_len: args.stream_len,
        num_phrases: args.phrases,
        vocab_size: args.vocab_size,
        n_min: args.n_min,
        n_max: args.n_max,
        repeats: args.repeats,
        seed: args.seed,
        ..BenchConfig::default()
    };
    let report = run_bench(&config)?;
    print!("{}", bench_table(&report));
    println!(
        "{} tokens, {} phrases, {} covered positions, outputs equal: {}",
        args.stream_len, args.phrases, report.covered_positions, report.equivalent
    );
    if !report.equivalent {
        bail!("automaton and naive scan disagree");
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        let mut manifest = RunManifest::new("bench", args, Some(args.seed));
        manifest.outputs = vec![out.clone()];
        manifest.wall_secs = started.elapsed().as_secs_f64();
        manifest.write(&manifest_path(out))?;
    }
    Ok(report)
}
