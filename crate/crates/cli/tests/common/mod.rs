#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_miniens");

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().expect("fixtures directory")
}

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").canonicalize().expect("configs directory")
}

pub fn english_train_files() -> Vec<PathBuf> {
    let en = fixtures().join("en");
    ["twitter-2013train", "twitter-2013test", "twitter-2014test", "twitter-2015train", "twitter-2016train"]
        .iter()
        .map(|n| en.join(format!("{n}.tsv")))
        .collect()
}

pub fn english_dev_files() -> Vec<PathBuf> {
    let en = fixtures().join("en");
    vec![en.join("twitter-2013test.tsv"), en.join("twitter-2014test.tsv")]
}

pub fn english_test_file() -> PathBuf {
    fixtures().join("en/twitter-2017test.tsv")
}

pub fn arabic_semeval_files() -> Vec<PathBuf> {
    let ar = fixtures().join("ar");
    ["A", "B", "D"].iter().map(|t| ar.join(format!("semeval2017-ar-{t}-train.tsv"))).collect()
}

pub fn arabic_astd_file() -> PathBuf {
    fixtures().join("ar/astd.tsv")
}

pub fn arabic_test_file() -> PathBuf {
    fixtures().join("ar/semeval2017-ar-A-test.tsv")
}

/// `prepare` arguments for both fixture languages, writing to `out`.
pub fn prepare_args(out: &str) -> Vec<String> {
    let mut args = vec!["prepare".to_string(), "--en-train".into()];
    args.extend(english_train_files().iter().map(|p| p.display().to_string()));
    args.push("--en-dev".into());
    args.extend(english_dev_files().iter().map(|p| p.display().to_string()));
    args.extend(["--en-test".into(), english_test_file().display().to_string(), "--ar-semeval".into()]);
    args.extend(arabic_semeval_files().iter().map(|p| p.display().to_string()));
    args.extend([
        "--ar-astd".into(),
        arabic_astd_file().display().to_string(),
        "--ar-test".into(),
        arabic_test_file().display().to_string(),
        "--out".into(),
        out.into(),
    ]);
    args
}

/// Runs the binary in `dir` with `MINIENS_SEED` unset.
pub fn run<S: AsRef<str>>(dir: &Path, args: &[S]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("MINIENS_SEED")
        .args(args.iter().map(AsRef::as_ref))
        .output()
        .expect("binary runs")
}

/// Like [`run`], failing with the captured stderr unless the exit code is 0.
pub fn run_ok<S: AsRef<str>>(dir: &Path, args: &[S]) -> Result<Output, String> {
    let out = run(dir, args);
    if out.status.success() {
        Ok(out)
    } else {
        let args: Vec<&str> = args.iter().map(AsRef::as_ref).collect();
        Err(format!(
            "`miniens {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// The setup 1, 2 and 3 runs over the fixture presets: `(checkpoint dir, train args)`.
pub fn experiment_runs() -> Vec<(String, Vec<String>)> {
    let cfg = |name: &str| configs().join(name).display().to_string();
    let mut runs = Vec::new();
    for (lang, models) in [("ar", ["mini-arabert", "mini-mbert", "mini-xlmr"]), ("en", ["mini-roberta", "mini-mbert", "mini-xlmr"])] {
        for model in models {
            runs.push((format!("s1-{model}-{lang}"), cfg(&format!("setup1-{lang}.cfg")), model.to_string()));
        }
    }
    for variant in ["a", "b"] {
        runs.push((format!("s2-{variant}"), cfg("setup2-merged.cfg"), format!("ensemble-{variant}")));
        for lang in ["ar", "en"] {
            runs.push((format!("s3-{variant}-{lang}"), cfg(&format!("setup3-{lang}.cfg")), format!("ensemble-{variant}")));
        }
    }
    runs.into_iter()
        .map(|(dir, config, model)| {
            let out = format!("ck/{dir}");
            let args = ["train", "--config", &config, "--model", &model, "--data", "data", "--tokenizers", "tok", "--out", &out]
                .iter()
                .map(|s| s.to_string())
                .collect();
            (out, args)
        })
        .collect()
}

/// prepare, tokenizer-train, every experiment run, then `eval --vote`, all
/// inside `dir` with relative output paths.
pub fn full_pipeline(dir: &Path) -> Result<Vec<String>, String> {
    run_ok(dir, &prepare_args("data"))?;
    run_ok(dir, &["tokenizer-train", "--data", "data", "--out", "tok"])?;
    let mut checkpoints = Vec::new();
    for (out, args) in experiment_runs() {
        run_ok(dir, &args)?;
        checkpoints.push(out);
    }
    let mut eval = vec!["eval".to_string(), "--checkpoint".into()];
    eval.extend(checkpoints.iter().cloned());
    eval.extend(["--test".into(), "data".into(), "--vote".into(), "--out".into(), "results".into()]);
    run_ok(dir, &eval)?;
    Ok(checkpoints)
}
