//! Trainable systems and their on-disk checkpoint directories.
//!
//! A checkpoint directory holds:
//!
//! ```text
//! model.cfg                  experiment config that produced it
//! tokenizers/<encoder>/      vocab.txt and merges.txt per encoder
//! params.bin                 every parameter, in the tensor checkpoint format
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, ModelId};
use crate::data::{Example, Language};
use crate::encoder::{Encoder, EncoderConfig, EncoderKind, SingleClassifier};
use crate::ensemble::{EnsembleConfig, EnsembleModel, Prediction};
use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::preprocess::clean_text;
use crate::tensor::{read_checkpoint, write_checkpoint, NamedTensor, Tensor};
use crate::tokenizer::BpeVocab;

pub enum Model {
    Single(SingleClassifier),
    Ensemble(EnsembleModel),
}

impl Model {
    /// Randomly initialized model for `id`. `tokenizer` supplies the
    /// vocabulary of each encoder the model needs.
    pub fn build(
        id: ModelId,
        dropout: f64,
        tokenizer: &mut dyn FnMut(EncoderKind) -> Result<BpeVocab>,
        rng: &mut dyn RngCore,
    ) -> Result<Model> {
        // Each kind draws from its own stream, so mini-mbert and mini-xlmr
        // start from different weights even with equal vocabularies.
        let mut encoder = |kind: EncoderKind, rng: &mut dyn RngCore| -> Result<Encoder> {
            let vocab = tokenizer(kind)?;
            let mut cfg = EncoderConfig::desk(kind, vocab.len());
            cfg.dropout = dropout;
            let mut own = ChaCha8Rng::seed_from_u64(rng.next_u64());
            own.set_stream(kind as u64 + 1);
            Encoder::new(cfg, vocab, &mut own)
        };
        Ok(match id {
            ModelId::Single(kind) => {
                let enc = encoder(kind, rng)?;
                Model::Single(SingleClassifier::new(enc, rng))
            }
            ModelId::Ensemble(variant) => {
                let arabic = encoder(EncoderKind::MiniArabert, rng)?;
                let english = encoder(EncoderKind::MiniRoberta, rng)?;
                let shared = encoder(EncoderKind::MiniMbert, rng)?;
                Model::Ensemble(EnsembleModel::new(
                    EnsembleConfig::new(variant),
                    arabic,
                    english,
                    shared,
                    rng,
                )?)
            }
        })
    }

    pub fn id(&self) -> ModelId {
        match self {
            Model::Single(m) => ModelId::Single(m.encoder.kind()),
            Model::Ensemble(m) => ModelId::Ensemble(m.variant()),
        }
    }

    pub fn encoders(&self) -> Vec<&Encoder> {
        match self {
            Model::Single(m) => vec![&m.encoder],
            Model::Ensemble(m) => vec![&m.arabic, &m.english, &m.shared],
        }
    }

    /// `[batch, 3]` logits for cleaned texts that all share `language`.
    pub fn logits<S: AsRef<str>>(
        &self,
        texts: &[S],
        language: Language,
        max_seq_len: usize,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        match self {
            Model::Single(m) => m.logits(&m.encoder.tokenize(texts, max_seq_len)?, mode),
            Model::Ensemble(m) => {
                let (tl, ts) = m.tokenize(texts, language, max_seq_len)?;
                Ok(m.forward(&tl, &ts, language, mode)?.logits)
            }
        }
    }

    /// Eval-mode predictions, computed in monolingual batches of at most
    /// `batch_size` consecutive examples.
    pub fn predict(&self, examples: &[Example], max_seq_len: usize, batch_size: usize) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in monolingual_chunks(examples, batch_size) {
            let texts: Vec<String> = chunk.iter().map(|e| clean_text(&e.text).into_string()).collect();
            let language = chunk[0].language;
            let logits = self.logits(&texts, language, max_seq_len, &mut Mode::Eval)?;
            out.extend(Prediction::from_logits(&logits, language)?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.cfg"), config.to_text())?;
        for enc in self.encoders() {
            enc.tokenizer().save(&dir.join("tokenizers").join(enc.kind().as_str()))?;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join("params.bin"))?);
        write_checkpoint(&mut w, &self.named_parameters())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Model, ExperimentConfig)> {
        let cfg_path = dir.join("model.cfg");
        let text = fs::read_to_string(&cfg_path).map_err(|e| {
            Error::CheckpointMismatch(format!("cannot read {}: {e}", cfg_path.display()))
        })?;
        let config = ExperimentConfig::parse(&text)?;
        let mut tokenizer = |kind: EncoderKind| BpeVocab::load(&dir.join("tokenizers").join(kind.as_str()));
        // Initial values are overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::build(config.model, config.dropout, &mut tokenizer, &mut rng)?;
        let mut r = BufReader::new(fs::File::open(dir.join("params.bin"))?);
        load_parameters(&model, read_checkpoint(&mut r)?)?;
        Ok((model, config))
    }
}

impl Module for Model {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        match self {
            Model::Single(m) => m.visit_parameters(prefix, out),
            Model::Ensemble(m) => m.visit_parameters(prefix, out),
        }
    }
}

/// Copies loaded values into `module`, requiring the same names and shapes.
pub fn load_parameters(module: &dyn Module, entries: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<()> {
    let params: BTreeMap<String, Tensor> = module.named_parameters().into_iter().collect();
    let mut loaded: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for (name, shape, data) in entries {
        if loaded.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::CheckpointMismatch(format!("parameter `{name}` appears twice")));
        }
    }
    if let Some(extra) = loaded.keys().find(|k| !params.contains_key(*k)) {
        return Err(Error::CheckpointMismatch(format!("unexpected parameter `{extra}`")));
    }
    for (name, tensor) in &params {
        let Some((shape, data)) = loaded.remove(name) else {
            return Err(Error::CheckpointMismatch(format!("missing parameter `{name}`")));
        };
        if shape != tensor.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "`{name}` has shape {shape:?}, model expects {:?}",
                tensor.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "load_parameters" });
        }
        tensor.set_data(data);
    }
    Ok(())
}

/// Maximal runs of consecutive same-language examples, split further so no
/// chunk exceeds `batch_size`.
pub fn monolingual_chunks(examples: &[Example], batch_size: usize) -> Vec<&[Example]> {
    let batch_size = batch_size.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=examples.len() {
        if i == examples.len() || examples[i].language != examples[start].language || i - start == batch_size {
            if i > start {
                out.push(&examples[start..i]);
            }
            start = i;
        }
    }
    out
}
