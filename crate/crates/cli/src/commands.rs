use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use miniens::config::{paper_schedule, parse_pairs, ExperimentConfig, ModelId};
use miniens::data::{
    build_arabic_bundle, build_english_bundle, class_counts, load_semeval, write_split, DatasetBundle,
    Example, Language, Sentiment,
};
use miniens::encoder::EncoderKind;
use miniens::ensemble::{majority_vote, Prediction};
use miniens::metrics::{evaluate, MetricsReport, ResultsTable};
use miniens::model::Model;
use miniens::preprocess::clean_text;
use miniens::tokenizer::BpeVocab;
use miniens::training::{
    init_model, train_ensemble_merged, train_ensemble_perlang, train_single, train_tokenizers, TrainLog,
};
use miniens::Error;

use crate::manifest::{write_atomic, RunManifest};
use crate::{CliError, EvalArgs, PredictArgs, PrepareArgs, TokenizerTrainArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

const LANGUAGES: [Language; 2] = [Language::Ar, Language::En];
const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// `MINIENS_SEED`, if set.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MINIENS_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("MINIENS_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn language(s: &str) -> Result<Language> {
    Ok(s.parse()?)
}

fn split_path(data: &Path, lang: Language, split: &str) -> PathBuf {
    data.join(lang.as_str()).join(format!("{split}.tsv"))
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let seed = env_seed()?.unwrap_or(a.seed);
    let en_given = !a.en_train.is_empty() || !a.en_dev.is_empty() || a.en_test.is_some();
    let ar_given = !a.ar_semeval.is_empty() || a.ar_astd.is_some() || a.ar_test.is_some();
    if !en_given && !ar_given {
        return Err(CliError::Usage("nothing to prepare: pass the English or Arabic inputs".into()));
    }
    let mut manifest = RunManifest::new("prepare", seed, None);
    let mut bundles = Vec::new();
    if en_given {
        let (Some(test), false, false) = (&a.en_test, a.en_train.is_empty(), a.en_dev.is_empty()) else {
            return Err(CliError::Usage("English needs --en-train, --en-dev and --en-test".into()));
        };
        for p in a.en_train.iter().chain(&a.en_dev).chain([test]) {
            manifest.input(p).map_err(|e| missing(p, e))?;
        }
        bundles.push((Language::En, build_english_bundle(&a.en_train, &a.en_dev, test)?));
    }
    if ar_given {
        let (Some(astd), Some(test), false) = (&a.ar_astd, &a.ar_test, a.ar_semeval.is_empty()) else {
            return Err(CliError::Usage("Arabic needs --ar-semeval, --ar-astd and --ar-test".into()));
        };
        for p in a.ar_semeval.iter().chain([astd, test]) {
            manifest.input(p).map_err(|e| missing(p, e))?;
        }
        bundles.push((Language::Ar, build_arabic_bundle(&a.ar_semeval, astd, test, seed)?));
    }
    bundles.sort_by_key(|(l, _)| *l);

    let mut summary = String::from("language\tsplit\tpositive\tnegative\tneutral\ttotal\n");
    let mut provenance = String::new();
    for (lang, bundle) in &bundles {
        fs::create_dir_all(a.out.join(lang.as_str()))?;
        for (split, examples) in SPLITS.iter().zip([&bundle.train, &bundle.dev, &bundle.test]) {
            let path = split_path(&a.out, *lang, split);
            write_split(&path, examples)?;
            manifest.output(&path);
            let [p, n, u] = class_counts(examples);
            let _ = writeln!(summary, "{lang}\t{split}\t{p}\t{n}\t{u}\t{}", examples.len());
        }
        for (id, source) in &bundle.provenance {
            let _ = writeln!(provenance, "{lang}\t{id}\t{source}");
        }
    }
    fs::write(a.out.join("summary.tsv"), &summary)?;
    fs::write(a.out.join("provenance.tsv"), provenance)?;
    manifest.output(&a.out.join("summary.tsv"));
    manifest.output(&a.out.join("provenance.tsv"));
    manifest.write(&a.out.join("manifest.txt"))?;
    print!("{summary}");
    Ok(())
}

fn missing(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::MissingData(format!("cannot read {}: {e}", path.display())))
}

/// Config files and flags merged in order: files, then `--setup`,
/// `--model` and `--language`, then `key=value` overrides, then
/// `MINIENS_SEED`. Keys still missing take the setup's schedule.
fn resolve_config(a: &TrainArgs) -> Result<(ExperimentConfig, Vec<PathBuf>)> {
    let mut map = BTreeMap::new();
    let mut files = Vec::new();
    let mut overrides = Vec::new();
    for item in &a.config {
        let path = Path::new(item);
        if path.is_file() {
            let text = fs::read_to_string(path)?;
            map.extend(parse_pairs(&text)?);
            files.push(path.to_path_buf());
        } else if let Some((k, v)) = item.split_once('=') {
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        } else {
            return Err(CliError::Usage(format!("--config `{item}` is neither a file nor key=value")));
        }
    }
    if let Some(s) = a.setup {
        map.insert("setup".into(), s.to_string());
    }
    if let Some(m) = &a.model {
        map.insert("model".into(), m.clone());
    }
    if let Some(l) = &a.language {
        map.insert("language".into(), language(l)?.as_str().into());
    }
    map.extend(overrides);
    if let Some(seed) = env_seed()? {
        map.insert("seed".into(), seed.to_string());
    }

    let setup: Option<u8> = map.get("setup").and_then(|s| s.parse().ok());
    if let Some((batch, epochs)) = setup.and_then(paper_schedule) {
        let loss = if setup == Some(1) { "bce_logits" } else { "cross_entropy" };
        map.entry("loss".into()).or_insert(loss.into());
        map.entry("batch_size".into()).or_insert(batch.to_string());
        map.entry("epochs".into()).or_insert(epochs.to_string());
    }
    if setup == Some(1) && !map.contains_key("language") {
        let lang = match map.get("model").map(String::as_str) {
            Some("mini-arabert") => Some("ar"),
            Some("mini-roberta") => Some("en"),
            _ => None,
        };
        if let Some(l) = lang {
            map.insert("language".into(), l.into());
        }
    }
    let config = ExperimentConfig::from_pairs(&map)?;
    config.validate()?;
    Ok((config, files))
}

fn load_bundle(data: &Path, lang: Language) -> Result<DatasetBundle> {
    let mut bundle = DatasetBundle::default();
    for (split, out) in SPLITS.iter().zip([&mut bundle.train, &mut bundle.dev, &mut bundle.test]) {
        let path = split_path(data, lang, split);
        if !path.is_file() {
            return Err(CliError::Core(Error::MissingData(format!(
                "{} not found; run `miniens prepare` first",
                path.display()
            ))));
        }
        *out = load_semeval(&path, lang)?;
    }
    Ok(bundle)
}

/// Cleaned training texts per language, from whichever languages `data` has.
fn tokenizer_corpora(data: &Path, manifest: &mut RunManifest) -> Result<(Vec<String>, Vec<String>)> {
    let mut corpora = [Vec::new(), Vec::new()];
    for (lang, corpus) in LANGUAGES.iter().zip(&mut corpora) {
        let path = split_path(data, *lang, "train");
        if path.is_file() {
            manifest.input(&path)?;
            *corpus = load_semeval(&path, *lang)?
                .iter()
                .map(|e| clean_text(&e.text).into_string())
                .collect();
        }
    }
    let [ar, en] = corpora;
    Ok((ar, en))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (config, files) = resolve_config(&a)?;
    let mut manifest = RunManifest::new("train", config.seed, Some(config.to_text()));
    for f in &files {
        manifest.input(f)?;
    }
    let languages: Vec<Language> = config.language.map_or(LANGUAGES.to_vec(), |l| vec![l]);
    let mut bundles = BTreeMap::new();
    for &lang in &languages {
        bundles.insert(lang, load_bundle(&a.data, lang)?);
        for split in ["dev", "test"] {
            manifest.input(&split_path(&a.data, lang, split))?;
        }
    }
    let tokenizers = match &a.tokenizers {
        Some(dir) => {
            let mut out = Vec::new();
            for kind in config.model.encoders() {
                let sub = dir.join(kind.as_str());
                manifest.input_dir(&sub).map_err(|e| missing(&sub, e))?;
                out.push((kind, BpeVocab::load(&sub)?));
            }
            for &lang in &languages {
                manifest.input(&split_path(&a.data, lang, "train"))?;
            }
            out
        }
        None => {
            let (ar, en) = tokenizer_corpora(&a.data, &mut manifest)?;
            train_tokenizers(config.model, config.vocab_size, &ar, &en)?
        }
    };
    for o in config.overrides() {
        eprintln!("note: desk override {o}");
    }

    let start = Instant::now();
    let model = init_model(&config, tokenizers)?;
    let log = match config.setup {
        1 => train_single(&model, &bundles[&languages[0]], &config)?,
        2 => train_ensemble_merged(&model, &bundles[&Language::Ar], &bundles[&Language::En], &config)?,
        _ => train_ensemble_perlang(&model, &bundles[&languages[0]], languages[0], &config)?,
    };
    report_log(&log);
    eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());

    model.save(&a.out, &config)?;
    let log_path = a.out.join("train_log.tsv");
    write_atomic(&log_path, log.to_tsv().as_bytes())?;
    for name in ["model.cfg", "params.bin"] {
        manifest.output(&a.out.join(name));
    }
    for kind in config.model.encoders() {
        manifest.output(&a.out.join("tokenizers").join(kind.as_str()));
    }
    manifest.output(&log_path);
    manifest.write(&a.out.join("manifest.txt"))?;
    Ok(())
}

fn report_log(log: &TrainLog) {
    for r in &log.records {
        let secs = log.wall_clock_secs.get(r.epoch - 1).copied().unwrap_or(0.0);
        eprintln!(
            "epoch {} [{}] train_loss {:.4} dev_loss {:.4} acc {:.4} macroF1 {:.4} ({secs:.1}s)",
            r.epoch, r.scope, r.train_loss, r.dev_loss, r.dev.accuracy, r.dev.macro_f1
        );
    }
}

pub fn tokenizer_train(a: TokenizerTrainArgs) -> Result<()> {
    let seed = env_seed()?.unwrap_or(miniens::config::DEFAULT_SEED);
    let mut manifest = RunManifest::new("tokenizer-train", seed, None);
    let (ar, en) = tokenizer_corpora(&a.data, &mut manifest)?;
    if ar.is_empty() && en.is_empty() {
        return Err(CliError::Core(Error::MissingData(format!(
            "no ar/train.tsv or en/train.tsv under {}",
            a.data.display()
        ))));
    }
    for kind in EncoderKind::ALL {
        for (k, vocab) in train_tokenizers(ModelId::Single(kind), a.vocab_size, &ar, &en)? {
            let dir = a.out.join(k.as_str());
            vocab.save(&dir)?;
            manifest.output(&dir);
            println!("{k}\t{} tokens", vocab.len());
        }
    }
    manifest.write(&a.out.join("manifest.txt"))?;
    Ok(())
}

/// Row label for a checkpoint, e.g. `setup1/mini-mbert/ar`.
fn system_name(config: &ExperimentConfig) -> String {
    let scope = config.language.map_or("merged", Language::as_str);
    format!("setup{}/{}/{scope}", config.setup, config.model)
}

const PREDICTIONS_HEADER: &str = "id\tlanguage\tgold\tpred\tp_positive\tp_negative\tp_neutral\n";

fn prediction_rows(out: &mut String, examples: &[Example], preds: &[Prediction]) {
    for (e, p) in examples.iter().zip(preds) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.id, e.language, e.label, p.label, p.probs[0], p.probs[1], p.probs[2]
        );
    }
}

fn metrics_of(examples: &[Example], preds: &[Prediction]) -> Result<MetricsReport> {
    let gold: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    let pred: Vec<Sentiment> = preds.iter().map(|p| p.label).collect();
    Ok(evaluate(&gold, &pred)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let seed = env_seed()?.unwrap_or(miniens::config::DEFAULT_SEED);
    let mut manifest = RunManifest::new("eval", seed, None);
    let mut tests: Vec<(Language, Vec<Example>)> = Vec::new();
    if a.test.is_dir() {
        if a.language.is_some() {
            return Err(CliError::Usage("--language only applies to a single --test file".into()));
        }
        for lang in LANGUAGES {
            let path = split_path(&a.test, lang, "test");
            if path.is_file() {
                manifest.input(&path)?;
                tests.push((lang, load_semeval(&path, lang)?));
            }
        }
    } else {
        let Some(l) = &a.language else {
            return Err(CliError::Usage("a --test file needs --language".into()));
        };
        manifest.input(&a.test).map_err(|e| missing(&a.test, e))?;
        let lang = language(l)?;
        tests.push((lang, load_semeval(&a.test, lang)?));
    }
    if tests.iter().all(|(_, t)| t.is_empty()) {
        return Err(CliError::Core(Error::MissingData("no test examples found".into())));
    }

    let columns: Vec<String> = tests.iter().map(|(l, _)| l.as_str().to_string()).collect();
    let mut table = ResultsTable::new(columns);
    // Per column, each covering checkpoint's setup and predictions.
    let mut voters: Vec<Vec<(u8, Vec<Prediction>)>> = vec![Vec::new(); tests.len()];
    let pred_dir = a.out.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    let mut seen_names: BTreeMap<String, usize> = BTreeMap::new();

    for (index, dir) in a.checkpoint.iter().enumerate() {
        manifest.input_dir(dir).map_err(|e| missing(dir, e))?;
        let (model, config) = Model::load(dir)?;
        let mut name = system_name(&config);
        let count = seen_names.entry(name.clone()).or_insert(0);
        *count += 1;
        if *count > 1 {
            name = format!("{name}#{count}");
        }
        let mut cells = Vec::new();
        let mut dump = String::from(PREDICTIONS_HEADER);
        for (col, (lang, examples)) in tests.iter().enumerate() {
            let covered = config.language.is_none_or(|l| l == *lang);
            if !covered || examples.is_empty() {
                cells.push(None);
                continue;
            }
            let preds = model.predict(examples, config.max_seq_len, config.batch_size)?;
            cells.push(Some(metrics_of(examples, &preds)?));
            prediction_rows(&mut dump, examples, &preds);
            voters[col].push((config.setup, preds));
        }
        let path = pred_dir.join(format!("{:02}-{}.tsv", index + 1, name.replace(['/', '#'], "_")));
        fs::write(&path, dump)?;
        manifest.output(&path);
        table.push(name, cells);
    }

    if a.vote {
        let mut cells = Vec::new();
        let mut dump = String::from(PREDICTIONS_HEADER);
        for ((_, examples), covering) in tests.iter().zip(&voters) {
            if covering.is_empty() || examples.is_empty() {
                cells.push(None);
                continue;
            }
            let singles = covering.iter().any(|(setup, _)| *setup == 1);
            let members: Vec<&Vec<Prediction>> = covering
                .iter()
                .filter(|(setup, _)| !singles || *setup == 1)
                .map(|(_, p)| p)
                .collect();
            let mut committee = Vec::with_capacity(examples.len());
            for i in 0..examples.len() {
                let ballot: Vec<Prediction> = members.iter().map(|m| m[i]).collect();
                let mut probs = [0.0; 3];
                for p in &ballot {
                    for (acc, q) in probs.iter_mut().zip(p.probs) {
                        *acc += q / ballot.len() as f64;
                    }
                }
                committee.push(Prediction {
                    probs,
                    label: majority_vote(&ballot)?,
                    language: ballot[0].language,
                });
            }
            cells.push(Some(metrics_of(examples, &committee)?));
            prediction_rows(&mut dump, examples, &committee);
        }
        let path = pred_dir.join("vote.tsv");
        fs::write(&path, dump)?;
        manifest.output(&path);
        table.push("majority-vote", cells);
    }

    let rendered = table.render();
    write_atomic(&a.out.join("results.txt"), rendered.as_bytes())?;
    let mut tsv = format!("system\tlanguage\t{}\n", MetricsReport::TSV_HEADER);
    for row in &table.rows {
        for (col, cell) in table.columns.iter().zip(&row.cells) {
            if let Some(m) = cell {
                let _ = writeln!(tsv, "{}\t{col}\t{}", row.system, m.tsv_fields());
            }
        }
    }
    write_atomic(&a.out.join("results.tsv"), tsv.as_bytes())?;
    manifest.output(&a.out.join("results.txt"));
    manifest.output(&a.out.join("results.tsv"));
    manifest.write(&a.out.join("manifest.txt"))?;
    print!("{rendered}");
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let lang = language(&a.language)?;
    let (model, config) = Model::load(&a.checkpoint)?;
    let example = Example {
        id: "input".into(),
        text: a.text,
        language: lang,
        label: Sentiment::Neutral,
    };
    let p = model.predict(&[example], config.max_seq_len, 1)?[0];
    println!("label\tp_positive\tp_negative\tp_neutral");
    println!("{}\t{}\t{}\t{}", p.label, p.probs[0], p.probs[1], p.probs[2]);
    Ok(())
}
