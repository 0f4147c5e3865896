use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use ulkit::candidates::naive_block_scan;
use ulkit::corpus::{load_blocklist, load_corpus};
use ulkit_cli::commands::{scan_vocab, ScanMatch};
use ulkit_cli::{exit_code, run, Cli, RunManifest, EXIT_DATA, EXIT_USAGE};

fn ulkit(args: &[&str]) -> anyhow::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("ulkit").chain(args.iter().copied()))?;
    run(&cli)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir), "--num-samples", "120", "--seed", "5"];
    args.extend(extra);
    ulkit(&args).unwrap();
}

fn train(corpus: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--corpus", p(corpus), "--out", p(out), "--embed-dim", "16", "--ffn-dim", "24", "--context-len", "96",
    ];
    args.extend(extra);
    ulkit(&args).unwrap();
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, &["--blocklist-plant-rate", "0.5"]);
    synth(&b, &["--blocklist-plant-rate", "0.5"]);
    for f in ["train.jsonl", "heldout.jsonl", "blocklist.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = RunManifest::read(&a.join("manifest.json")).unwrap();
    assert_eq!(m.subcommand, "synth");
    assert_eq!(m.seed, Some(5));
    assert_eq!(m.config["num_samples"], 120);
}

#[test]
fn staged_training_generation_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("data"), &["--blocklist-plant-rate", "0.5"]);
    let corpus = d.join("data/train.jsonl");
    let held = d.join("data/heldout.jsonl");
    let blocklist = d.join("data/blocklist.txt");
    train(&corpus, &d.join("mle.ulkt"), &["--epochs", "2"]);
    train(&corpus, &d.join("tok.ulkt"), &["--objective", "token_ul", "--init-from", p(&d.join("mle.ulkt"))]);
    train(&corpus, &d.join("seq.ulkt"), &["--objective", "seq_ul", "--init-from", p(&d.join("tok.ulkt"))]);
    train(
        &corpus,
        &d.join("blk.ulkt"),
        &["--objective", "seq_ul_block", "--blocklist", p(&blocklist), "--init-from", p(&d.join("mle.ulkt"))],
    );

    // the step log carries timing for each step kind
    let log = fs::read_to_string(d.join("seq.ulkt.log.ndjson")).unwrap();
    assert!(log.lines().any(|l| l.contains("\"kind\":\"seq_ul\"")));
    assert!(log.lines().any(|l| l.contains("\"kind\":\"token_ul\"")));

    // generation: default is beam 5, beam 1 equals greedy, reruns agree
    let seq = d.join("seq.ulkt");
    let gen = |name: &str, extra: &[&str]| {
        let out = d.join(name);
        let mut args = vec!["generate", "--corpus", p(&held), "--checkpoint", p(&seq), "--out", p(&out)];
        args.extend(extra);
        ulkit(&args).unwrap();
        fs::read_to_string(out).unwrap()
    };
    let beam5 = gen("a.jsonl", &[]);
    let manifest = RunManifest::read(&d.join("a.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest.config["decode"]["beam"], 5);
    assert_eq!(gen("b.jsonl", &[]), beam5);
    assert_eq!(gen("c.jsonl", &["--beam", "1"]), gen("d.jsonl", &["--strategy", "greedy"]));

    // evaluation: side-by-side table with every in-scope column
    let out = d.join("eval.json");
    ulkit(&[
        "evaluate", "--corpus", p(&held), "--checkpoint", p(&d.join("mle.ulkt")), "--checkpoint", p(&d.join("seq.ulkt")),
        "--checkpoint", p(&d.join("blk.ulkt")), "--blocklist", p(&blocklist), "--rep-window", "96", "--out", p(&out),
    ])
    .unwrap();
    let table = fs::read_to_string(d.join("eval.json.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    for col in [
        "ppl", "acc", "rep-96", "wrep-96", "seq-rep-1", "seq-rep-4", "uniq", "uniq-seq", "ROUGE1-F", "ROUGE2-F",
        "ROUGEL-F", "blocklist-outputs",
    ] {
        assert!(header.contains(&col), "{col}");
    }
    assert_eq!(table.lines().count(), 4);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
    assert_eq!(json[0]["report"]["samples"], 12);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("data"), &[]);
    let corpus = d.join("data/train.jsonl");
    let out = d.join("x.ulkt");

    let err = ulkit(&["train", "--corpus", p(&corpus), "--objective", "seq_ul_block", "--out", p(&out)]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
    let err = ulkit(&["train", "--corpus", p(&d.join("missing.jsonl")), "--out", p(&out)]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    let err = ulkit(&["train", "--corpus", p(&corpus), "--lr=-1", "--out", p(&out)]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
    let err = ulkit(&["train", "--corpus", p(&corpus), "--epochs", "many", "--out", p(&out)]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);

    let empty = d.join("empty.jsonl");
    fs::write(&empty, "\n").unwrap();
    train(&corpus, &out, &[]);
    let err = ulkit(&["evaluate", "--corpus", p(&empty), "--checkpoint", p(&out), "--out", p(&d.join("e.json"))]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);

    let bad = d.join("bad.jsonl");
    fs::write(&bad, "{\"bullet_points\": \"* a\", \"paragraph\": \"b .\"}\nnot json\n").unwrap();
    assert!(ulkit(&["scan", "--corpus", p(&bad), "--strict", "--blocklist", p(&corpus), "--out", p(&d.join("s"))]).is_err());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ulkit");
    let help = Process::new(bin).args(["train", "--help"]).output().unwrap();
    assert!(help.status.success());
    let text = String::from_utf8(help.stdout).unwrap();
    assert!(text.contains("[default: 0.1]") && text.contains("[default: mle]"));
    let usage = Process::new(bin).args(["train", "--bogus"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    let data = Process::new(bin).args(["scan", "--corpus", "/nonexistent", "--blocklist", "/nonexistent", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(data.status.code(), Some(1));
}

#[test]
fn manifest_command_reproduces_checkpoint() {
    let bin = env!("CARGO_BIN_EXE_ulkit");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("data"), &[]);
    let out = d.join("m.ulkt");
    let status = Process::new(bin)
        .args(["train", "--corpus", p(&d.join("data/train.jsonl")), "--out", p(&out), "--objective", "seq_ul"])
        .args(["--embed-dim", "8", "--ffn-dim", "8", "--context-len", "96", "--epochs", "2", "--seed", "9"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let first = fs::read(&out).unwrap();
    let manifest = RunManifest::read(&d.join("m.ulkt.manifest.json")).unwrap();
    assert_eq!(manifest.seed, Some(9));
    assert_eq!(manifest.config["objective"], "seq_ul");
    fs::remove_file(&out).unwrap();
    let rerun = Process::new(bin).args(&manifest.argv[1..]).output().unwrap();
    assert!(rerun.status.success());
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn scan_positions_match_naive_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("data"), &["--blocklist-plant-rate", "0.5", "--blocklist-size", "6"]);
    let corpus = d.join("data/train.jsonl");
    let blocklist = d.join("data/blocklist.txt");
    let out = d.join("scan.jsonl");
    ulkit(&["scan", "--corpus", p(&corpus), "--blocklist", p(&blocklist), "--out", p(&out)]).unwrap();
    let found: Vec<ScanMatch> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!found.is_empty());

    let samples = load_corpus(&corpus, true).unwrap().samples;
    let phrases = load_blocklist(&blocklist).unwrap();
    let vocab = scan_vocab(&samples, &phrases, false).unwrap();
    let encoded: Vec<Vec<u32>> = phrases.iter().map(|s| vocab.encode(s).into_inner()).collect();
    for (i, s) in samples.iter().enumerate() {
        let ids = vocab.encode(&s.paragraph);
        let naive = naive_block_scan(&ids, &encoded);
        let mut covered = vec![false; ids.len()];
        for m in found.iter().filter(|m| m.sample == i) {
            covered[m.start..m.start + m.len].iter_mut().for_each(|c| *c = true);
            assert_eq!(vocab.decode(&ids[m.start..m.start + m.len]).unwrap(), m.phrase);
        }
        let expected: Vec<bool> = naive.sets.iter().map(|s| !s.is_empty()).collect();
        assert_eq!(covered, expected, "sample {i}");
    }
}

#[test]
fn dedup_sweep_emits_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("data"), &["--repeat-rate", "1.0"]);
    let out = d.join("dedup.jsonl");
    ulkit(&["dedup", "--corpus", p(&d.join("data/train.jsonl")), "--sweep", "0.91", "0.8", "--out", p(&out)]).unwrap();
    let table = fs::read_to_string(d.join("dedup.jsonl.sweep.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("threshold") && lines[0].contains("seq-rep-4"));
    assert!(lines[2].contains("0.91") && lines[3].contains("0.8"));
    // every paragraph had a duplicated sentence
    let drops = fs::read_to_string(d.join("dedup.jsonl.drops.jsonl")).unwrap();
    assert!(drops.lines().count() >= 108);
    let deduped = load_corpus(&out, true).unwrap().samples;
    assert_eq!(deduped.len(), 108);

    let err = ulkit(&["dedup", "--corpus", p(&d.join("data/train.jsonl")), "--threshold", "1.5", "--out", p(&out)]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
}

#[test]
fn bench_reports_both_timings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    ulkit(&["bench", "--stream-len", "2000", "--phrases", "100", "--repeats", "1", "--out", p(&out)]).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["naive_secs"].as_f64().unwrap() > 0.0);
    assert!(report["automaton_secs"].as_f64().unwrap() > 0.0);
    assert_eq!(report["equivalent"], true);
}
