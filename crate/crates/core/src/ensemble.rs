//! Two-encoder ensembles and majority voting.
//!
//! An [`EnsembleModel`] holds three encoders: `mini-arabert` for Arabic,
//! `mini-roberta` for English and `mini-mbert` shared by both. For a batch
//! of one language it runs the routed encoder and the shared encoder on the
//! same cleaned text, each with its own vocabulary, and concatenates the two
//! pooler outputs:
//!
//! ```text
//! fused = gelu([pool_lang ; pool_shared] · W_f + b_f)          width d_fusion
//! ```
//!
//! Variant B feeds `fused` straight into the head. Variant A first splits it
//! into two tokens of width `d_fusion / 2` (the first half tied to the
//! language-specific stream, the second to the shared one), runs one
//! multi-head self-attention block over that length-2 sequence and averages
//! the two outputs. The head is `Linear → gelu → Linear(3)`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::data::{Language, Sentiment};
use crate::encoder::{Encoder, EncoderKind};
use crate::error::{Error, Result};
use crate::nn::{join, Linear, Mode, Module, MultiHeadAttention};
use crate::tensor::{NamedTensor, Tensor};
use crate::tokenizer::TokenBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Fusion, then multi-head attention, then the feed-forward head.
    A,
    /// Fusion, then the feed-forward head.
    B,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A => "a",
            Variant::B => "b",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            _ => Err(Error::InvalidConfig(format!("unknown ensemble variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub variant: Variant,
    pub d_fusion: usize,
    pub d_hidden: usize,
    pub mha_heads: usize,
}

impl EnsembleConfig {
    pub fn new(variant: Variant) -> Self {
        EnsembleConfig {
            variant,
            d_fusion: 64,
            d_hidden: 64,
            mha_heads: 4,
        }
    }

    /// Width entering the head.
    pub fn head_input(&self) -> usize {
        match self.variant {
            Variant::A => self.d_fusion / 2,
            Variant::B => self.d_fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_fusion == 0 || self.d_hidden == 0 {
            return Err(Error::InvalidConfig("ensemble widths must be positive".into()));
        }
        if self.variant == Variant::A
            && (self.d_fusion % 2 != 0 || self.mha_heads == 0 || (self.d_fusion / 2) % self.mha_heads != 0)
        {
            return Err(Error::InvalidConfig(format!(
                "variant a needs d_fusion / 2 = {} divisible by {} heads",
                self.d_fusion / 2,
                self.mha_heads
            )));
        }
        Ok(())
    }
}

/// Softmax output for one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// Indexed by [`Sentiment::index`].
    pub probs: [f64; 3],
    pub label: Sentiment,
    pub language: Language,
}

impl Prediction {
    /// Argmax with ties to the lowest class index.
    pub fn from_probs(probs: [f64; 3], language: Language) -> Self {
        let mut best = 0;
        for c in 1..3 {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        Prediction {
            probs,
            label: Sentiment::from_index(best).expect("three classes"),
            language,
        }
    }

    /// One prediction per row of a `[batch, 3]` logits tensor.
    pub fn from_logits(logits: &Tensor, language: Language) -> Result<Vec<Prediction>> {
        if logits.shape().len() != 2 || logits.shape()[1] != 3 {
            return Err(Error::shape("prediction", logits.shape(), &[0, 3]));
        }
        let probs = logits.softmax(1)?;
        let probs = probs.data();
        Ok(probs
            .chunks(3)
            .map(|p| Prediction::from_probs([p[0], p[1], p[2]], language))
            .collect())
    }
}

/// Modal label. A tie between several labels goes to the one with the
/// highest summed probability across the committee, then to the lowest
/// class index.
pub fn majority_vote(predictions: &[Prediction]) -> Result<Sentiment> {
    if predictions.is_empty() {
        return Err(Error::EmptyPredictionList);
    }
    let mut votes = [0usize; 3];
    let mut mass = [0.0f64; 3];
    for p in predictions {
        votes[p.label.index()] += 1;
        for (m, q) in mass.iter_mut().zip(p.probs) {
            *m += q;
        }
    }
    let mut best = 0;
    for c in 1..3 {
        if (votes[c], mass[c]) > (votes[best], mass[best]) {
            best = c;
        }
    }
    Ok(Sentiment::from_index(best).expect("three classes"))
}

/// Intermediate values of one ensemble forward pass.
pub struct EnsembleOutput {
    pub pooler_lang: Tensor,
    pub pooler_shared: Tensor,
    /// `[batch, d_fusion]`
    pub fused: Tensor,
    /// Variant A only: `[batch, heads, 2, 2]`.
    pub attention: Option<Tensor>,
    pub head_input: Tensor,
    pub logits: Tensor,
}

pub struct EnsembleModel {
    config: EnsembleConfig,
    pub arabic: Encoder,
    pub english: Encoder,
    pub shared: Encoder,
    pub fusion: Linear,
    pub mha: Option<MultiHeadAttention>,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl EnsembleModel {
    pub fn new(
        config: EnsembleConfig,
        arabic: Encoder,
        english: Encoder,
        shared: Encoder,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        config.validate()?;
        for (enc, want) in [
            (&arabic, EncoderKind::MiniArabert),
            (&english, EncoderKind::MiniRoberta),
            (&shared, EncoderKind::MiniMbert),
        ] {
            if enc.kind() != want {
                return Err(Error::InvalidConfig(format!(
                    "ensemble slot for {want} holds {}",
                    enc.kind()
                )));
            }
        }
        let d_shared = shared.config().d_model;
        let d_lang = arabic.config().d_model;
        if english.config().d_model != d_lang {
            return Err(Error::InvalidConfig(
                "arabic and english encoders differ in d_model".into(),
            ));
        }
        let fusion = Linear::new(d_lang + d_shared, config.d_fusion, rng);
        let mha = match config.variant {
            Variant::A => Some(MultiHeadAttention::new(config.d_fusion / 2, config.mha_heads, rng)),
            Variant::B => None,
        };
        let head_hidden = Linear::new(config.head_input(), config.d_hidden, rng);
        let head_out = Linear::new(config.d_hidden, Sentiment::COUNT, rng);
        Ok(EnsembleModel {
            config,
            arabic,
            english,
            shared,
            fusion,
            mha,
            head_hidden,
            head_out,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// The language-specific encoder for `language`; the shared encoder is
    /// used for every language.
    pub fn route(&self, language: Language) -> &Encoder {
        match language {
            Language::Ar => &self.arabic,
            Language::En => &self.english,
        }
    }

    /// [`Self::route`] from a language code.
    pub fn route_code(&self, code: &str) -> Result<(&Encoder, &Encoder)> {
        let language: Language = code.parse()?;
        Ok((self.route(language), &self.shared))
    }

    /// Tokenizes the same cleaned texts for the routed and shared encoders.
    pub fn tokenize<S: AsRef<str>>(
        &self,
        texts: &[S],
        language: Language,
        max_seq_len: usize,
    ) -> Result<(TokenBatch, TokenBatch)> {
        Ok((
            self.route(language).tokenize(texts, max_seq_len)?,
            self.shared.tokenize(texts, max_seq_len)?,
        ))
    }

    pub fn fuse(&self, pooler_lang: &Tensor, pooler_shared: &Tensor) -> Result<Tensor> {
        let cat = pooler_lang.concat_last_dim(pooler_shared)?;
        self.fusion.forward(&cat)?.gelu()
    }

    pub fn forward(
        &self,
        tokens_lang: &TokenBatch,
        tokens_shared: &TokenBatch,
        language: Language,
        mode: &mut Mode,
    ) -> Result<EnsembleOutput> {
        if tokens_lang.len() != tokens_shared.len() {
            return Err(Error::shape(
                "ensemble_forward",
                &[tokens_lang.len()],
                &[tokens_shared.len()],
            ));
        }
        let pooler_lang = self.route(language).pooled(tokens_lang, mode)?;
        let pooler_shared = self.shared.pooled(tokens_shared, mode)?;
        let fused = self.fuse(&pooler_lang, &pooler_shared)?;
        let (head_input, attention) = match &self.mha {
            None => (fused.clone(), None),
            Some(mha) => {
                let b = fused.shape()[0];
                let half = self.config.d_fusion / 2;
                let tokens = fused.reshape(&[b, 2, half])?;
                let att = mha.forward(&tokens, &tokens, &tokens, &vec![1; b * 2])?;
                (att.output.mean_axis(1)?, Some(att.weights))
            }
        };
        let logits = self
            .head_out
            .forward(&self.head_hidden.forward(&head_input)?.gelu()?)?;
        Ok(EnsembleOutput {
            pooler_lang,
            pooler_shared,
            fused,
            attention,
            head_input,
            logits,
        })
    }

    /// Eval-mode class probabilities.
    pub fn predict(
        &self,
        tokens_lang: &TokenBatch,
        tokens_shared: &TokenBatch,
        language: Language,
    ) -> Result<Vec<Prediction>> {
        let out = self.forward(tokens_lang, tokens_shared, language, &mut Mode::Eval)?;
        Prediction::from_logits(&out.logits, language)
    }
}

impl Module for EnsembleModel {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.arabic.visit_parameters(&join(prefix, "arabic"), out);
        self.english.visit_parameters(&join(prefix, "english"), out);
        self.shared.visit_parameters(&join(prefix, "shared"), out);
        self.fusion.visit_parameters(&join(prefix, "fusion"), out);
        if let Some(mha) = &self.mha {
            mha.visit_parameters(&join(prefix, "mha"), out);
        }
        self.head_hidden.visit_parameters(&join(prefix, "head.hidden"), out);
        self.head_out.visit_parameters(&join(prefix, "head.out"), out);
    }
}
