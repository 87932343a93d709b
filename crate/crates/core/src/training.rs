//! Fine-tuning loops for the three experiment setups.
//!
//! Every run draws from three ChaCha8 streams of the config seed: parameter
//! initialization, batch shuffling and dropout. Equal seeds give equal
//! parameters, logs and checkpoints.
//!
//! Batches never mix languages. Each epoch shuffles every language's
//! examples, cuts them into batches, and presents one language block after
//! the other in a freshly shuffled block order.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LossKind, ModelId};
use crate::data::{DatasetBundle, Example, Language, Sentiment};
use crate::encoder::EncoderKind;
use crate::ensemble::Prediction;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{monolingual_chunks, Model};
use crate::nn::{Mode, Module};
use crate::preprocess::clean_text;
use crate::tensor::{bce_with_logits, cross_entropy, Adam, AdamConfig, Tensor};
use crate::tokenizer::{train_bpe, BpeVocab};

pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;

/// Generator for one of the run's independent random streams.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Metrics of one epoch on one evaluation scope.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `all` for the merged sets, otherwise a language code.
    pub scope: String,
    /// Mean training loss over this scope's examples in the epoch.
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Epoch-major, one record per scope per completed epoch.
    pub records: Vec<EpochRecord>,
    /// Seconds spent per epoch. Not part of the TSV.
    pub wall_clock_secs: Vec<f64>,
}

impl TrainLog {
    pub const TSV_HEADER: &'static str = "epoch\tscope\ttrain_loss\tdev_loss\tacc\twP\twR\tmacroF1";

    pub fn epochs(&self) -> usize {
        self.wall_clock_secs.len()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::TSV_HEADER);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.epoch,
                r.scope,
                r.train_loss,
                r.dev_loss,
                r.dev.tsv_fields()
            );
        }
        out
    }

    /// Records of the last epoch.
    pub fn last(&self) -> &[EpochRecord] {
        let last = self.records.last().map_or(0, |r| r.epoch);
        let start = self.records.iter().position(|r| r.epoch == last).unwrap_or(0);
        &self.records[start..]
    }
}

/// Trains a BPE vocabulary for every encoder `id` needs: language-specific
/// encoders on their language, multilingual ones on both. A language with
/// no text falls back to the other one.
pub fn train_tokenizers(
    id: ModelId,
    vocab_size: usize,
    arabic: &[String],
    english: &[String],
) -> Result<Vec<(EncoderKind, BpeVocab)>> {
    let both: Vec<&String> = arabic.iter().chain(english).collect();
    id.encoders()
        .into_iter()
        .map(|kind| {
            let corpus: Vec<&String> = match kind {
                EncoderKind::MiniArabert if !arabic.is_empty() => arabic.iter().collect(),
                EncoderKind::MiniRoberta if !english.is_empty() => english.iter().collect(),
                _ => both.clone(),
            };
            Ok((kind, train_bpe(&corpus, vocab_size)?))
        })
        .collect()
}

/// A freshly initialized model for `config`, drawn from the init stream.
pub fn init_model(config: &ExperimentConfig, tokenizers: Vec<(EncoderKind, BpeVocab)>) -> Result<Model> {
    let mut rng = rng_stream(config.seed, INIT_STREAM);
    let mut take = |kind: EncoderKind| {
        tokenizers
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::InvalidConfig(format!("no tokenizer for {kind}")))
    };
    Model::build(config.model, config.dropout, &mut take, &mut rng)
}

/// Setup 1: one encoder with its head on one language.
pub fn train_single(model: &Model, bundle: &DatasetBundle, config: &ExperimentConfig) -> Result<TrainLog> {
    require(config, 1, model)?;
    let language = config.language.expect("validated");
    let train = only(&bundle.train, language);
    let dev = only(&bundle.dev, language);
    fit(model, config, &[(language, train)], &[(language.as_str(), dev)])
}

/// Setup 2: the ensemble on Arabic and English together, evaluated on the
/// merged dev set and on each language.
pub fn train_ensemble_merged(
    model: &Model,
    arabic: &DatasetBundle,
    english: &DatasetBundle,
    config: &ExperimentConfig,
) -> Result<TrainLog> {
    require(config, 2, model)?;
    let train_ar = only(&arabic.train, Language::Ar);
    let train_en = only(&english.train, Language::En);
    let dev_ar = only(&arabic.dev, Language::Ar);
    let dev_en = only(&english.dev, Language::En);
    let dev_all: Vec<Example> = dev_ar.iter().chain(&dev_en).cloned().collect();
    fit(
        model,
        config,
        &[(Language::Ar, train_ar), (Language::En, train_en)],
        &[("all", dev_all), ("ar", dev_ar), ("en", dev_en)],
    )
}

/// Setup 3: the ensemble on one language.
pub fn train_ensemble_perlang(
    model: &Model,
    bundle: &DatasetBundle,
    language: Language,
    config: &ExperimentConfig,
) -> Result<TrainLog> {
    require(config, 3, model)?;
    if config.language != Some(language) {
        return Err(Error::ConfigMismatch(format!(
            "setup 3 config is for {:?}, bundle is {language}",
            config.language.map(Language::as_str)
        )));
    }
    let train = only(&bundle.train, language);
    let dev = only(&bundle.dev, language);
    fit(model, config, &[(language, train)], &[(language.as_str(), dev)])
}

fn require(config: &ExperimentConfig, setup: u8, model: &Model) -> Result<()> {
    config.validate()?;
    if config.setup != setup {
        return Err(Error::ConfigMismatch(format!(
            "setup {setup} trainer given a setup {} config",
            config.setup
        )));
    }
    if model.id() != config.model {
        return Err(Error::ConfigMismatch(format!(
            "config names {}, model is {}",
            config.model,
            model.id()
        )));
    }
    Ok(())
}

fn only(examples: &[Example], language: Language) -> Vec<Example> {
    examples.iter().filter(|e| e.language == language).cloned().collect()
}

/// Mean loss and predictions of `model` in eval mode.
pub fn evaluate_examples(
    model: &Model,
    examples: &[Example],
    config: &ExperimentConfig,
) -> Result<(f64, Vec<Prediction>)> {
    if examples.is_empty() {
        return Err(Error::MissingData("nothing to evaluate".into()));
    }
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in monolingual_chunks(examples, config.batch_size) {
        let texts: Vec<String> = chunk.iter().map(|e| clean_text(&e.text).into_string()).collect();
        let language = chunk[0].language;
        let logits = model.logits(&texts, language, config.max_seq_len, &mut Mode::Eval)?;
        let labels: Vec<Sentiment> = chunk.iter().map(|e| e.label).collect();
        total += loss(config.loss, &logits, &labels)?.item() * chunk.len() as f64;
        predictions.extend(Prediction::from_logits(&logits, language)?);
    }
    Ok((total / examples.len() as f64, predictions))
}

/// Mean loss and metrics of `model` on `examples`.
pub fn score(model: &Model, examples: &[Example], config: &ExperimentConfig) -> Result<(f64, MetricsReport)> {
    let (loss, predictions) = evaluate_examples(model, examples, config)?;
    let gold: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    let pred: Vec<Sentiment> = predictions.iter().map(|p| p.label).collect();
    Ok((loss, evaluate(&gold, &pred)?))
}

/// BCE-with-logits over one-hot targets, or cross entropy.
pub fn loss(kind: LossKind, logits: &Tensor, labels: &[Sentiment]) -> Result<Tensor> {
    match kind {
        LossKind::CrossEntropy => {
            let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
            cross_entropy(logits, &targets)
        }
        LossKind::BceLogits => {
            let mut onehot = vec![0.0; labels.len() * Sentiment::COUNT];
            for (row, l) in labels.iter().enumerate() {
                onehot[row * Sentiment::COUNT + l.index()] = 1.0;
            }
            bce_with_logits(logits, &Tensor::from_vec(&[labels.len(), Sentiment::COUNT], onehot)?)
        }
    }
}

struct Batch {
    language: Language,
    texts: Vec<String>,
    labels: Vec<Sentiment>,
}

/// One epoch's batches: per language, shuffled and cut; blocks in shuffled
/// order.
fn epoch_batches(
    blocks: &[(Language, Vec<(String, Sentiment)>)],
    batch_size: usize,
    rng: &mut dyn RngCore,
) -> Vec<Batch> {
    let mut per_language: Vec<Vec<Batch>> = blocks
        .iter()
        .map(|(language, examples)| {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(rng);
            order
                .chunks(batch_size)
                .map(|idx| Batch {
                    language: *language,
                    texts: idx.iter().map(|&i| examples[i].0.clone()).collect(),
                    labels: idx.iter().map(|&i| examples[i].1).collect(),
                })
                .collect()
        })
        .collect();
    per_language.shuffle(rng);
    per_language.into_iter().flatten().collect()
}

/// The loop behind every setup. It checks no setup invariants, so any loss
/// and batch size run on any model; `train` holds one block per language
/// and `dev` one set per scope.
pub fn fit(
    model: &Model,
    config: &ExperimentConfig,
    train: &[(Language, Vec<Example>)],
    dev: &[(&str, Vec<Example>)],
) -> Result<TrainLog> {
    let blocks: Vec<(Language, Vec<(String, Sentiment)>)> = train
        .iter()
        .filter(|(_, examples)| !examples.is_empty())
        .map(|(language, examples)| {
            let cleaned = examples
                .iter()
                .map(|e| (clean_text(&e.text).into_string(), e.label))
                .collect();
            (*language, cleaned)
        })
        .collect();
    if blocks.is_empty() {
        return Err(Error::MissingData("no training examples".into()));
    }
    if let Some((scope, _)) = dev.iter().find(|(_, d)| d.is_empty()) {
        return Err(Error::MissingData(format!("empty dev set for scope {scope}")));
    }
    let params = model.parameters();
    let mut optimizer = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut shuffle = rng_stream(config.seed, SHUFFLE_STREAM);
    let mut dropout = rng_stream(config.seed, DROPOUT_STREAM);
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut sums: Vec<(Language, f64, usize)> = blocks.iter().map(|(l, _)| (*l, 0.0, 0)).collect();
        for batch in epoch_batches(&blocks, config.batch_size, &mut shuffle) {
            let logits = model.logits(&batch.texts, batch.language, config.max_seq_len, &mut Mode::Train(&mut dropout))?;
            let value = loss(config.loss, &logits, &batch.labels)?;
            Adam::zero_grad(&params);
            value.backward()?;
            optimizer.step(&params);
            let entry = sums.iter_mut().find(|s| s.0 == batch.language).expect("known language");
            entry.1 += value.item() * batch.labels.len() as f64;
            entry.2 += batch.labels.len();
        }
        Adam::zero_grad(&params);
        for (scope, examples) in dev {
            let (sum, count) = sums
                .iter()
                .filter(|s| *scope == "all" || s.0.as_str() == *scope)
                .fold((0.0, 0), |(a, n), s| (a + s.1, n + s.2));
            let (dev_loss, report) = score(model, examples, config)?;
            log.records.push(EpochRecord {
                epoch,
                scope: scope.to_string(),
                train_loss: if count == 0 { 0.0 } else { sum / count as f64 },
                dev_loss,
                dev: report,
            });
        }
        log.wall_clock_secs.push(started.elapsed().as_secs_f64());
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Variant;

    fn example(i: usize, language: Language) -> Example {
        let words = match language {
            Language::En => ["good fun", "awful mess", "the bus"],
            Language::Ar => ["جميل جدا", "سيء جدا", "في البيت"],
        };
        Example {
            id: format!("{language}-{i}"),
            text: words[i % 3].to_string(),
            language,
            label: Sentiment::from_index(i % 3).unwrap(),
        }
    }

    fn bundle(language: Language, n: usize) -> DatasetBundle {
        DatasetBundle {
            train: (0..n).map(|i| example(i, language)).collect(),
            dev: (0..3).map(|i| example(i, language)).collect(),
            test: Vec::new(),
            provenance: Default::default(),
        }
    }

    fn config(text: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::parse(text).unwrap();
        c.max_seq_len = 16;
        c.vocab_size = 60;
        c
    }

    fn corpus(b: &DatasetBundle) -> Vec<String> {
        b.train.iter().map(|e| clean_text(&e.text).into_string()).collect()
    }

    #[test]
    fn batches_are_monolingual_and_cover_every_example() {
        let blocks = vec![
            (Language::Ar, (0..7).map(|i| (format!("a{i}"), Sentiment::Neutral)).collect()),
            (Language::En, (0..5).map(|i| (format!("e{i}"), Sentiment::Neutral)).collect()),
        ];
        let mut rng = rng_stream(1, SHUFFLE_STREAM);
        let batches = epoch_batches(&blocks, 3, &mut rng);
        assert_eq!(batches.len(), 3 + 2);
        let mut seen: Vec<String> = Vec::new();
        for b in &batches {
            let prefix = if b.language == Language::Ar { 'a' } else { 'e' };
            assert!(b.texts.iter().all(|t| t.starts_with(prefix)));
            assert!(b.texts.len() <= 3);
            seen.extend(b.texts.iter().cloned());
        }
        seen.sort();
        assert_eq!(seen.len(), 12);
        seen.dedup();
        assert_eq!(seen.len(), 12);
        // Blocks stay contiguous: the language changes exactly once.
        let switches = batches.windows(2).filter(|w| w[0].language != w[1].language).count();
        assert_eq!(switches, 1);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = rng_stream(7, INIT_STREAM);
        let mut b = rng_stream(7, SHUFFLE_STREAM);
        let mut c = rng_stream(7, INIT_STREAM);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_eq!(x, z);
    }

    #[test]
    fn single_run_logs_every_epoch_and_is_deterministic() {
        let en = bundle(Language::En, 9);
        let cfg = config(
            "setup = 1\nmodel = mini-roberta\nloss = bce_logits\nlanguage = en\nbatch_size = 16\nepochs = 2\n",
        );
        let run = || {
            let toks = train_tokenizers(cfg.model, cfg.vocab_size, &[], &corpus(&en)).unwrap();
            let model = init_model(&cfg, toks).unwrap();
            let log = train_single(&model, &en, &cfg).unwrap();
            let params: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.to_vec()).collect();
            (log, params)
        };
        let (log, params) = run();
        assert_eq!(log.epochs(), 2);
        let tsv = log.to_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert_eq!(tsv.lines().next().unwrap(), TrainLog::TSV_HEADER);
        assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 8));
        let (log2, params2) = run();
        assert_eq!(tsv, log2.to_tsv());
        assert_eq!(params, params2);
    }

    #[test]
    fn merged_run_reports_all_and_each_language() {
        let (ar, en) = (bundle(Language::Ar, 6), bundle(Language::En, 6));
        let cfg = config("setup = 2\nmodel = ensemble-b\nloss = cross_entropy\nbatch_size = 24\nepochs = 1\n");
        let toks = train_tokenizers(cfg.model, cfg.vocab_size, &corpus(&ar), &corpus(&en)).unwrap();
        let model = init_model(&cfg, toks).unwrap();
        let log = train_ensemble_merged(&model, &ar, &en, &cfg).unwrap();
        let scopes: Vec<&str> = log.records.iter().map(|r| r.scope.as_str()).collect();
        assert_eq!(scopes, ["all", "ar", "en"]);
    }

    #[test]
    fn arabic_run_leaves_english_encoder_untouched() {
        let ar = bundle(Language::Ar, 6);
        let cfg = config(
            "setup = 3\nmodel = ensemble-a\nloss = cross_entropy\nlanguage = ar\nbatch_size = 24\nepochs = 1\n",
        );
        let toks = train_tokenizers(cfg.model, cfg.vocab_size, &corpus(&ar), &[]).unwrap();
        let model = init_model(&cfg, toks).unwrap();
        let Model::Ensemble(m) = &model else { unreachable!() };
        let before_en: Vec<Vec<f64>> = m.english.parameters().iter().map(|p| p.to_vec()).collect();
        let before_ar: Vec<Vec<f64>> = m.arabic.parameters().iter().map(|p| p.to_vec()).collect();
        train_ensemble_perlang(&model, &ar, Language::Ar, &cfg).unwrap();
        let after_en: Vec<Vec<f64>> = m.english.parameters().iter().map(|p| p.to_vec()).collect();
        let after_ar: Vec<Vec<f64>> = m.arabic.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before_en, after_en);
        assert_ne!(before_ar, after_ar);
    }

    #[test]
    fn trainer_refuses_foreign_setups() {
        let en = bundle(Language::En, 3);
        let cfg = config("setup = 2\nmodel = ensemble-a\nloss = cross_entropy\nbatch_size = 24\nepochs = 1\n");
        let toks = train_tokenizers(cfg.model, cfg.vocab_size, &corpus(&en), &corpus(&en)).unwrap();
        let model = init_model(&cfg, toks).unwrap();
        assert!(matches!(
            train_ensemble_perlang(&model, &en, Language::En, &cfg),
            Err(Error::ConfigMismatch(_))
        ));
        let mut single = cfg.clone();
        single.model = ModelId::Ensemble(Variant::B);
        assert!(matches!(
            train_ensemble_merged(&model, &en, &en, &single),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn bce_targets_are_one_hot() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let l = loss(LossKind::BceLogits, &logits, &[Sentiment::Negative]).unwrap().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let ce = loss(LossKind::CrossEntropy, &logits, &[Sentiment::Negative]).unwrap().item();
        assert!((ce - 3f64.ln()).abs() < 1e-12);
    }
}
