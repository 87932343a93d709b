//! Data preparation and training runs on the fixture corpora.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use miniens::config::{paper_schedule, ExperimentConfig, LossKind, ModelId};
use miniens::data::{
    build_arabic_bundle, build_english_bundle, class_counts, dedup_key, load_astd, load_semeval, write_split,
    DatasetBundle, Language, Sentiment,
};
use miniens::encoder::EncoderKind;
use miniens::ensemble::Variant;
use miniens::preprocess::clean_text;
use miniens::training::{fit, init_model, train_single, train_tokenizers};
use proptest::prelude::*;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    root().join("fixtures").join(rel)
}

fn english() -> DatasetBundle {
    let dev = vec![fixture("en/twitter-2013test.tsv"), fixture("en/twitter-2014test.tsv")];
    let mut train: Vec<PathBuf> = ["2013train", "2015train", "2016train"]
        .iter()
        .map(|y| fixture(&format!("en/twitter-{y}.tsv")))
        .collect();
    train.extend(dev.iter().cloned());
    build_english_bundle(&train, &dev, &fixture("en/twitter-2017test.tsv")).unwrap()
}

fn arabic(seed: u64) -> DatasetBundle {
    let semeval: Vec<PathBuf> = ["A", "B", "D"]
        .iter()
        .map(|s| fixture(&format!("ar/semeval2017-ar-{s}-train.tsv")))
        .collect();
    build_arabic_bundle(&semeval, &fixture("ar/astd.tsv"), &fixture("ar/semeval2017-ar-A-test.tsv"), seed).unwrap()
}

fn line_count(rel: &str) -> usize {
    std::fs::read_to_string(fixture(rel)).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

#[test]
fn english_splits_follow_the_files() {
    let b = english();
    let train = line_count("en/twitter-2013train.tsv")
        + line_count("en/twitter-2015train.tsv")
        + line_count("en/twitter-2016train.tsv");
    let dev = line_count("en/twitter-2013test.tsv") + line_count("en/twitter-2014test.tsv");
    assert_eq!((b.train.len(), b.dev.len(), b.test.len()), (train, dev, line_count("en/twitter-2017test.tsv")));
    assert!(b.dev.iter().all(|e| b.provenance[&e.id].ends_with("test")));
    assert!(b.train.iter().all(|e| b.provenance[&e.id].ends_with("train")));
}

#[test]
fn arabic_merge_counts_objective_rows_and_duplicates() {
    let raw = std::fs::read_to_string(fixture("ar/astd.tsv")).unwrap();
    let objective = raw.lines().filter(|l| l.ends_with("\tOBJ")).count();
    assert_eq!(load_astd(&fixture("ar/astd.tsv")).unwrap().len(), line_count("ar/astd.tsv") - objective);

    let mut keys = HashSet::new();
    for s in ["A", "B", "D"] {
        for e in load_semeval(&fixture(&format!("ar/semeval2017-ar-{s}-train.tsv")), Language::Ar).unwrap() {
            keys.insert(dedup_key(&e.text));
        }
    }
    for e in load_astd(&fixture("ar/astd.tsv")).unwrap() {
        keys.insert(dedup_key(&e.text));
    }
    let b = arabic(42);
    assert_eq!(b.train.len() + b.dev.len(), keys.len());
    assert_eq!(b.dev.len(), keys.len() / 10);
}

#[test]
fn arabic_split_depends_only_on_the_seed() {
    let (a, b, c) = (arabic(42), arabic(42), arabic(7));
    assert_eq!(a, b);
    assert_ne!(a.dev, c.dev);
    let ids = |x: &DatasetBundle| -> HashSet<String> { x.train.iter().chain(&x.dev).map(|e| e.id.clone()).collect() };
    assert_eq!(ids(&a), ids(&c));
    assert_eq!(a.test, c.test);
}

#[test]
fn every_split_is_labelled_and_of_one_language() {
    for (b, lang) in [(english(), Language::En), (arabic(42), Language::Ar)] {
        for split in [&b.train, &b.dev, &b.test] {
            assert!(split.iter().all(|e| e.language == lang));
            assert!(split.iter().all(|e| Sentiment::ALL.contains(&e.label)));
            assert!(class_counts(split).iter().all(|&n| n > 0));
        }
        let ids: Vec<&String> = b.train.iter().chain(&b.dev).chain(&b.test).map(|e| &e.id).collect();
        assert_eq!(ids.iter().collect::<HashSet<_>>().len(), ids.len());
        assert_eq!(ids.len(), b.provenance.len());
    }
}

#[test]
fn written_splits_reload_with_cleaned_text() {
    let dir = tempfile::tempdir().unwrap();
    let b = arabic(42);
    let path = dir.path().join("train.tsv");
    write_split(&path, &b.train).unwrap();
    let back = load_semeval(&path, Language::Ar).unwrap();
    assert_eq!(back.len(), b.train.len());
    for (x, y) in back.iter().zip(&b.train) {
        assert_eq!((&x.id, x.label), (&y.id, y.label));
        assert_eq!(x.text, clean_text(&y.text).as_str());
    }
}

fn desk(setup: u8, model: ModelId, language: Option<Language>) -> ExperimentConfig {
    let (batch_size, epochs) = paper_schedule(setup).unwrap();
    ExperimentConfig {
        setup,
        model,
        loss: if setup == 1 { LossKind::BceLogits } else { LossKind::CrossEntropy },
        language,
        lr: miniens::config::DEFAULT_LR,
        batch_size,
        epochs,
        max_seq_len: miniens::config::DEFAULT_MAX_SEQ_LEN,
        seed: 42,
        vocab_size: miniens::config::DEFAULT_VOCAB_SIZE,
        dropout: miniens::config::DEFAULT_DROPOUT,
    }
}

fn texts(b: &DatasetBundle) -> Vec<String> {
    b.train.iter().map(|e| clean_text(&e.text).into_string()).collect()
}

#[test]
fn shipped_configs_carry_the_prescribed_schedule() {
    for (file, setup, batch, epochs, loss) in [
        ("setup1-en.cfg", 1, 16, 3, LossKind::BceLogits),
        ("setup1-ar.cfg", 1, 16, 3, LossKind::BceLogits),
        ("setup2-merged.cfg", 2, 24, 2, LossKind::CrossEntropy),
        ("setup3-en.cfg", 3, 24, 2, LossKind::CrossEntropy),
        ("setup3-ar.cfg", 3, 24, 2, LossKind::CrossEntropy),
    ] {
        let text = std::fs::read_to_string(root().join("configs").join(file)).unwrap();
        let cfg = ExperimentConfig::parse(&text).unwrap();
        cfg.validate().unwrap();
        assert_eq!((cfg.setup, cfg.batch_size, cfg.epochs, cfg.loss), (setup, batch, epochs, loss), "{file}");
        assert_eq!(cfg.lr, 2e-5);
        assert!(cfg.overrides().is_empty(), "{file}");
    }
}

#[test]
fn setup_one_logs_three_epochs_at_the_prescribed_rate() {
    let b = english();
    let cfg = desk(1, ModelId::Single(EncoderKind::MiniRoberta), Some(Language::En));
    let toks = train_tokenizers(cfg.model, cfg.vocab_size, &[], &texts(&b)).unwrap();
    let model = init_model(&cfg, toks).unwrap();
    let log = train_single(&model, &b, &cfg).unwrap();
    assert_eq!(log.epochs(), 3);
    assert_eq!(log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(log.records.iter().all(|r| r.scope == "en" && r.train_loss.is_finite()));
}

#[test]
fn training_loss_falls_on_the_small_set() {
    let examples = load_semeval(&fixture("overfit/en-32.tsv"), Language::En).unwrap();
    let mut cfg = desk(3, ModelId::Ensemble(Variant::B), Some(Language::En));
    cfg.lr = 1e-3;
    cfg.epochs = 6;
    cfg.max_seq_len = 32;
    let corpus: Vec<String> = examples.iter().map(|e| clean_text(&e.text).into_string()).collect();
    let toks = train_tokenizers(cfg.model, cfg.vocab_size, &corpus, &corpus).unwrap();
    let model = init_model(&cfg, toks).unwrap();
    let log = fit(&model, &cfg, &[(Language::En, examples.clone())], &[("en", examples)]).unwrap();
    let first = log.records.first().unwrap().train_loss;
    let last = log.records.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}

fn model_id() -> impl Strategy<Value = ModelId> {
    prop_oneof![
        prop::sample::select(EncoderKind::ALL.to_vec()).prop_map(ModelId::Single),
        prop::sample::select(vec![Variant::A, Variant::B]).prop_map(ModelId::Ensemble),
    ]
}

proptest! {
    #[test]
    fn setup_loss_pairing(
        setup in 0u8..5,
        model in model_id(),
        ce in any::<bool>(),
        batch in prop::sample::select(vec![8usize, 16, 24, 32]),
        language in prop::option::of(prop::sample::select(Language::ALL.to_vec())),
    ) {
        let mut cfg = desk(1, model, language);
        cfg.setup = setup;
        cfg.loss = if ce { LossKind::CrossEntropy } else { LossKind::BceLogits };
        cfg.batch_size = batch;
        let single = matches!(model, ModelId::Single(_));
        let ok = match setup {
            1 => !ce && batch == 16 && single && language.is_some(),
            2 => ce && batch == 24 && !single && language.is_none(),
            3 => ce && batch == 24 && !single && language.is_some(),
            _ => false,
        };
        prop_assert_eq!(cfg.validate().is_ok(), ok);
        let round: BTreeMap<String, String> = miniens::config::parse_pairs(&cfg.to_text()).unwrap();
        prop_assert_eq!(ExperimentConfig::from_pairs(&round).unwrap(), cfg);
    }
}
