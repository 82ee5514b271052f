mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::run_cli;
use metafilm::checkpoint;
use metafilm::commands::GradCheckConfig;
use metafilm::report::{read_predictions, Outcome};
use metafilm_core::embeddings::{CandidateEncoderConfig, EncoderKind};
use metafilm_core::metrics::{confusion, evaluate_probabilities};
use metafilm_core::model::params::{OUT_B, OUT_W};
use metafilm_core::model::{param_shapes, ModelConfig, Pooling, Variant};
use metafilm_core::Tensor;
use tempfile::TempDir;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = run_cli(args);
    assert_eq!(code, 0, "{args:?}\n{out}\n{err}");
    out
}

/// Trains on `data` and returns the output directory.
fn train_toy(dir: &TempDir, name: &str, data: &Path, variant: &str, seeds: &str, epochs: &str) -> PathBuf {
    let out = dir.path().join(name);
    ok(&[
        "train",
        "--dataset",
        s(data),
        "--output-dir",
        s(&out),
        "--variant",
        variant,
        "--seeds",
        seeds,
        "--epochs",
        epochs,
        "--d-hidden",
        "6",
        "--batch-size",
        "4",
        "--set",
        "embeddings.d_word=8",
    ]);
    out
}

fn toy_dataset(dir: &TempDir, n: usize) -> PathBuf {
    let path = dir.path().join("toy.tsv");
    common::write_dataset(&path, &common::separable(n, 4));
    path
}

#[test]
fn prepare_writes_ratio_splits_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 10);
    let out = dir.path().join("prep");
    ok(&["prepare", "--dataset", s(&data), "--output-dir", s(&out)]);
    let count = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!((count("train.tsv"), count("dev.tsv"), count("test.tsv")), (7, 1, 2));
    let stats = fs::read_to_string(out.join("stats.txt")).unwrap();
    assert!(stats.contains("instances=10\n"), "{stats}");
    assert!(stats.contains("skipped=0\n"), "{stats}");
}

#[test]
fn malformed_lines_land_in_the_skip_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.tsv");
    let good = common::separable(6, 1);
    let mut text: String = good.iter().map(|i| i.to_record() + "\n").collect();
    text.push_str("only one field\n");
    text.push_str("the cat sat\tdog\t1\n");
    text.push_str("the cat sat\tcat\tmaybe\n");
    fs::write(&data, text).unwrap();
    let out = dir.path().join("prep");
    ok(&["prepare", "--dataset", s(&data), "--output-dir", s(&out)]);
    let report = fs::read_to_string(out.join("skipped.txt")).unwrap();
    for line in [7, 8, 9] {
        assert!(report.contains(&format!("line {line}\tskipped\t")), "{report}");
    }
    assert!(fs::read_to_string(out.join("stats.txt")).unwrap().contains("skipped=3"));
}

#[test]
fn prepare_with_nothing_usable_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.tsv");
    fs::write(&data, "nonsense\n").unwrap();
    let (code, _, err) = run_cli(&[
        "prepare",
        "--dataset",
        s(&data),
        "--output-dir",
        s(&dir.path().join("p")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("no instance survived"), "{err}");
}

#[test]
fn toy_training_writes_a_checkpoint_and_a_falling_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 24);
    let out = train_toy(&dir, "run", &data, "film", "1", "30");
    assert!(out.join("seed-1/checkpoint.bin").is_file());
    let log = fs::read_to_string(out.join("seed-1/epochs.tsv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let col = header.iter().position(|h| h.contains("loss")).expect("loss column");
    let losses: Vec<f64> = lines
        .map(|l| l.split('\t').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 30);
    let head: f64 = losses[..5].iter().sum();
    let tail: f64 = losses[25..].iter().sum();
    assert!(tail < head, "{losses:?}");
    assert!(fs::read_to_string(out.join("config.toml")).unwrap().contains("[model]"));
}

#[test]
fn several_seeds_give_several_checkpoints_and_a_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 20);
    let out = train_toy(&dir, "run", &data, "simple", "1,2,3,4,5", "2");
    for seed in 1..=5 {
        assert!(out.join(format!("seed-{seed}/checkpoint.bin")).is_file());
    }
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    let value = |key: &str| -> f64 {
        metrics
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or_else(|| panic!("{key} missing:\n{metrics}"))
            .parse()
            .unwrap()
    };
    let mean: f64 = (1..=5).map(|i| value(&format!("seed-{i}.f1="))).sum::<f64>() / 5.0;
    assert!((value("mean.f1=") - mean).abs() < 1e-12);
    let table = fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert_eq!(table.lines().count(), 7, "{table}");
}

#[test]
fn eval_after_convergence_and_record_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 40);
    let run = dir.path().join("run");
    let file = format!("{:?}", s(&data));
    ok(&[
        "train",
        "--output-dir",
        s(&run),
        "--epochs",
        "150",
        "--d-hidden",
        "6",
        "--batch-size",
        "8",
        "--set",
        "embeddings.d_word=8",
        "--set",
        "data.split=\"files\"",
        "--set",
        &format!("data.train={file}"),
        "--set",
        &format!("data.validation={file}"),
        "--set",
        &format!("data.test={file}"),
    ]);
    let ck = run.join("seed-1/checkpoint.bin");
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--dataset",
        s(&data),
        "--output-dir",
        s(&out),
        "--threads",
        "3",
    ]);
    assert!(
        stdout.contains("accuracy=1\n") || stdout.ends_with("accuracy=1"),
        "{stdout}"
    );

    let records = read_predictions(&out.join("predictions.csv")).unwrap();
    assert_eq!(records.len(), 40);
    let probs: Vec<f64> = records.iter().map(|r| r.probability).collect();
    let golds: Vec<u8> = records.iter().map(|r| r.gold.unwrap()).collect();
    let preds: Vec<u8> = records.iter().map(|r| r.predicted).collect();
    let c = confusion(&preds, &golds).unwrap();
    let tally = |o: Outcome| records.iter().filter(|r| r.outcome == Some(o)).count();
    assert_eq!(
        (
            tally(Outcome::TP),
            tally(Outcome::FP),
            tally(Outcome::FN),
            tally(Outcome::TN)
        ),
        (c.tp, c.fp, c.fn_, c.tn)
    );
    // The metrics file is recomputable from the records alone.
    let recomputed = evaluate_probabilities(&probs, &golds).unwrap();
    let text = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(text.contains(&format!("accuracy={}\n", recomputed.accuracy)), "{text}");
    assert!(text.contains(&format!("f1={}\n", recomputed.f1)), "{text}");
}

#[test]
fn eval_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 30);
    let run = train_toy(&dir, "run", &data, "film-attn", "1", "3");
    let ck = run.join("seed-1/checkpoint.bin");
    let read = |threads: &str| {
        let out = dir.path().join(format!("eval-{threads}"));
        ok(&[
            "eval",
            "--checkpoint",
            s(&ck),
            "--dataset",
            s(&data),
            "--output-dir",
            s(&out),
            "--threads",
            threads,
        ]);
        fs::read(out.join("predictions.csv")).unwrap()
    };
    assert_eq!(read("1"), read("4"));
}

#[test]
fn unlabelled_eval_emits_records_without_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 16);
    let run = train_toy(&dir, "run", &data, "simple", "1", "2");
    let unlabelled = dir.path().join("unlabelled.tsv");
    let insts: Vec<_> = common::separable(5, 8)
        .into_iter()
        .map(|mut i| {
            i.label = None;
            i
        })
        .collect();
    common::write_dataset(&unlabelled, &insts);
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&run.join("seed-1/checkpoint.bin")),
        "--dataset",
        s(&unlabelled),
        "--output-dir",
        s(&out),
    ]);
    assert!(stdout.contains("warning: no gold labels"), "{stdout}");
    assert_eq!(read_predictions(&out.join("predictions.csv")).unwrap().len(), 5);
    assert!(!out.join("metrics.txt").exists());
}

#[test]
fn predict_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 24);
    let run = train_toy(&dir, "run", &data, "film", "1", "5");
    let ck_path = run.join("seed-1/checkpoint.bin");
    let ck = s(&ck_path);
    let sentence = "the spark of it was on the table";
    let predict = |expr: &str| {
        ok(&[
            "predict",
            "--checkpoint",
            ck,
            "--sentence",
            sentence,
            "--expression",
            expr,
        ])
    };
    let a = predict("spark of");
    assert_eq!(a, predict("spark of"));
    assert_ne!(a, predict("the table"));
    let row = a.lines().nth(1).expect("header and one row");
    assert!(row.contains("spark of"), "{a}");

    // A zeroed output layer makes every probability exactly 0.5.
    let mut zeroed = checkpoint::load(&ck_path).unwrap();
    let d = zeroed.params.get(OUT_W).unwrap().shape().to_vec();
    zeroed.params.insert(OUT_W, Tensor::zeros(&d));
    zeroed.params.insert(OUT_B, Tensor::zeros(&[1]));
    let zero_path = dir.path().join("zero.bin");
    checkpoint::save(&zero_path, &zeroed).unwrap();
    let out = ok(&[
        "predict",
        "--checkpoint",
        s(&zero_path),
        "--sentence",
        sentence,
        "--expression",
        "table",
    ]);
    let fields: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[1], "0.5", "{out}");
    assert_eq!(fields[2], "1");

    let (code, _, err) = run_cli(&[
        "predict",
        "--checkpoint",
        ck,
        "--sentence",
        sentence,
        "--expression",
        "tree",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("matched in order"), "{err}");
}

#[test]
fn damaged_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    fs::write(&path, b"not a checkpoint").unwrap();
    let (code, _, err) = run_cli(&[
        "predict",
        "--checkpoint",
        s(&path),
        "--sentence",
        "a b",
        "--expression",
        "a",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("junk.bin"), "{err}");
}

#[test]
fn gradcheck_reports_every_parameter() {
    let out = ok(&["gradcheck", "--set", "d_attn=4"]);
    let defaults = GradCheckConfig::default();
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            d_word: defaults.d_word,
            d_hidden: defaults.d_hidden,
            d_attn: Some(4),
            max_len: defaults.max_len,
            pooling: Pooling::LastStep,
            candidate_encoder: CandidateEncoderConfig {
                kind: EncoderKind::ContextualRecurrent,
                d_cond: defaults.d_cond,
            },
        };
        let section = out
            .split(&format!("{}: max relative error", variant.name()))
            .nth(1)
            .unwrap()
            .lines()
            .skip(1)
            .take_while(|l| l.starts_with("  "))
            .collect::<Vec<_>>();
        let names: Vec<String> = section
            .iter()
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect();
        let expected: Vec<String> = param_shapes(&cfg).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), expected.len(), "{}", variant.name());
        for name in expected {
            assert!(names.contains(&name), "{} missing {name}", variant.name());
        }
    }
}

#[test]
fn gradcheck_rejects_a_wide_config() {
    let (code, _, err) = run_cli(&["gradcheck", "--set", "d_hidden=64"]);
    assert_eq!(code, 1);
    assert!(err.contains("d_hidden"), "{err}");
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 20);
    let out = train_toy(&dir, "run", &data, "simple-attn", "2", "3");
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    let metrics = fs::read(out.join("metrics.txt")).unwrap();
    let echo_path = dir.path().join("echo.toml");
    fs::write(&echo_path, &echo).unwrap();
    ok(&["train", "--config", s(&echo_path)]);
    assert_eq!(fs::read_to_string(out.join("config.toml")).unwrap(), echo);
    assert_eq!(fs::read(out.join("metrics.txt")).unwrap(), metrics);
}

#[test]
fn bad_configs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(&dir, 10);
    let cases = [
        ("[model]\nd_hidden = 0\n", "d_hidden"),
        ("[train]\nbatch_sise = 4\n", "batch_sise"),
        ("[model]\nvariant = \"deep\"\n", "variant"),
    ];
    for (text, field) in cases {
        let path = dir.path().join("bad.toml");
        fs::write(&path, text).unwrap();
        let (code, _, err) = run_cli(&["train", "--config", s(&path), "--dataset", s(&data)]);
        assert_eq!(code, 1, "{text}");
        assert!(err.contains(field), "{text}: {err}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run_cli(&["frobnicate"]).0, 1);
    assert_eq!(run_cli(&["--help"]).0, 0);
    let (code, _, err) = run_cli(&["train"]);
    assert_eq!(code, 1);
    assert!(err.contains("dataset"), "{err}");
}
