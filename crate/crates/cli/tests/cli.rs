//! The `miniens` binary: exit codes, outputs and manifests.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{prepare_args, run, run_ok, BIN};
use sha2::{Digest, Sha256};

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &prepare_args("data")).unwrap();
    run_ok(dir.path(), &["tokenizer-train", "--data", "data", "--out", "tok"]).unwrap();
    dir
}

fn train_args<'a>(model: &'a str, language: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--setup", "1", "--model", model, "--language", language, "--data", "data", "--tokenizers", "tok",
        "--config", "max_seq_len=64", "--out", out,
    ]
}

fn code(dir: &Path, args: &[&str]) -> Option<i32> {
    run(dir, args).status.code()
}

#[test]
fn usage_errors_exit_one() {
    let dir = prepared();
    let d = dir.path();
    assert_eq!(code(d, &["frobnicate"]), Some(1));
    assert_eq!(code(d, &train_args("mini-roberta", "fr", "ck")), Some(1));
    let mut mismatched = train_args("mini-roberta", "en", "ck");
    mismatched.extend(["--config", "loss=cross_entropy"]);
    let run = run(d, &mismatched);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("loss"));
    assert!(!d.join("ck").exists());
    assert_eq!(code(d, &["--help"]), Some(0));
}

#[test]
fn malformed_row_exits_two_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let source = common::english_test_file();
    let mut text = fs::read_to_string(&source).unwrap();
    let lines = text.lines().count();
    text.push_str("no tabs on this row\n");
    fs::write(d.join("broken.tsv"), text).unwrap();
    let mut args = prepare_args("data");
    let at = args.iter().position(|a| a == &source.display().to_string()).unwrap();
    args[at] = "broken.tsv".into();
    let out = run(d, &args);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("broken.tsv") && msg.contains(&format!("{}", lines + 1)), "{msg}");
}

#[test]
fn missing_input_exits_two() {
    let dir = prepared();
    assert_eq!(code(dir.path(), &["eval", "--checkpoint", "nowhere", "--test", "data", "--out", "r"]), Some(2));
}

#[test]
fn diverging_run_exits_three() {
    let dir = prepared();
    let mut args = train_args("mini-roberta", "en", "ck");
    args.extend(["--config", "lr=1e300"]);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn seed_variable_overrides_the_config() {
    let dir = prepared();
    let d = dir.path();
    run_ok(d, &train_args("mini-mbert", "ar", "base")).unwrap();
    let seeded = Command::new(BIN)
        .current_dir(d)
        .env("MINIENS_SEED", "7")
        .args(train_args("mini-mbert", "ar", "seeded"))
        .output()
        .unwrap();
    assert!(seeded.status.success());
    let manifest = fs::read_to_string(d.join("seeded/manifest.txt")).unwrap();
    assert!(manifest.contains("\nseed = 7\n"));
    assert!(fs::read_to_string(d.join("seeded/model.cfg")).unwrap().contains("\nseed = 7\n"));
    assert!(fs::read_to_string(d.join("base/model.cfg")).unwrap().contains("\nseed = 42\n"));
    assert_ne!(fs::read(d.join("base/params.bin")).unwrap(), fs::read(d.join("seeded/params.bin")).unwrap());
}

#[test]
fn prepare_is_reproducible_and_summarizes_every_class() {
    let dir = prepared();
    let d = dir.path();
    run_ok(d, &prepare_args("again")).unwrap();
    for rel in ["ar/train.tsv", "ar/dev.tsv", "ar/test.tsv", "en/train.tsv", "en/dev.tsv", "en/test.tsv", "summary.tsv"] {
        assert_eq!(fs::read(d.join("data").join(rel)).unwrap(), fs::read(d.join("again").join(rel)).unwrap(), "{rel}");
    }
    let summary = fs::read_to_string(d.join("data/summary.tsv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("language\tsplit\tpositive\tnegative\tneutral\ttotal"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let n: Vec<usize> = row[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(n[..3].iter().all(|&c| c > 0), "{row:?}");
        assert_eq!(n[0] + n[1] + n[2], n[3]);
    }
}

#[test]
fn predict_prints_a_distribution_and_repeats_itself() {
    let dir = prepared();
    let d = dir.path();
    run_ok(d, &train_args("mini-roberta", "en", "ck")).unwrap();
    let args = ["predict", "--checkpoint", "ck", "--text", "the concert was great today!!", "--language", "en"];
    let first = run_ok(d, &args).unwrap().stdout;
    assert_eq!(first, run_ok(d, &args).unwrap().stdout);
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("label\tp_positive\tp_negative\tp_neutral"));
    let fields: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert!(["positive", "negative", "neutral"].contains(&fields[0]));
    let probs: Vec<f64> = fields[1..].iter().map(|x| x.parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
}

fn system_rows(results: &Path) -> Vec<String> {
    fs::read_to_string(results.join("results.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect()
}

#[test]
fn eval_rows_and_committee() {
    let dir = prepared();
    let d = dir.path();
    for model in ["mini-roberta", "mini-mbert", "mini-xlmr"] {
        run_ok(d, &train_args(model, "en", &format!("ck-{model}"))).unwrap();
    }
    run_ok(d, &["eval", "--checkpoint", "ck-mini-roberta", "--test", "data", "--out", "one"]).unwrap();
    assert_eq!(system_rows(&d.join("one")), ["setup1/mini-roberta/en"]);

    let all = ["ck-mini-roberta", "ck-mini-mbert", "ck-mini-xlmr"];
    let mut args = vec!["eval", "--checkpoint"];
    args.extend(all);
    args.extend(["--test", "data", "--vote", "--out", "vote"]);
    run_ok(d, &args).unwrap();
    let rows = system_rows(&d.join("vote"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.last().unwrap(), "majority-vote");
    assert!(d.join("vote/predictions/vote.tsv").is_file());

    let file = common::english_test_file().display().to_string();
    run_ok(d, &["eval", "--checkpoint", "ck-mini-xlmr", "--test", &file, "--language", "en", "--out", "file"]).unwrap();
    assert_eq!(system_rows(&d.join("file")), ["setup1/mini-xlmr/en"]);
}

#[test]
fn manifests_record_input_digests() {
    let dir = prepared();
    let d = dir.path();
    run_ok(d, &train_args("mini-arabert", "ar", "ck")).unwrap();
    for manifest in ["data/manifest.txt", "ck/manifest.txt"] {
        let text = fs::read_to_string(d.join(manifest)).unwrap();
        let inputs = text.split("[inputs]\n").nth(1).unwrap().split("\n\n").next().unwrap();
        assert!(!inputs.is_empty(), "{manifest}");
        for line in inputs.lines() {
            let (digest, path) = line.split_once("  ").unwrap();
            let want = format!("{:x}", Sha256::digest(fs::read(d.join(path)).unwrap()));
            assert_eq!(digest, want, "{manifest}: {path}");
        }
        let outputs = text.split("[outputs]\n").nth(1).unwrap();
        assert!(outputs.lines().all(|p| d.join(p).exists()), "{manifest}");
    }
    let cfg = fs::read_to_string(d.join("ck/manifest.txt")).unwrap();
    assert!(cfg.contains("[config]\nsetup = 1\nmodel = mini-arabert\nloss = bce_logits\nlanguage = ar\n"));
}
