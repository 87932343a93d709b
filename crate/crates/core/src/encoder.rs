//! Miniature BERT-style encoder with a CLS pooler.
//!
//! Each encoder owns the BPE vocabulary its ids come from. A forward pass
//! runs token plus learned position embeddings through `n_layers` pre-norm
//! transformer blocks:
//!
//! ```text
//! h   = x + Dropout(MHA(LN1(x)))
//! out = h + Dropout(W2 · gelu(W1 · LN2(h)))
//! ```
//!
//! then a final layer norm. The pooler output is `tanh(W_p · h_cls + b_p)`
//! on the first (`<cls>`) position.
//!
//! Only the first `L` positions of a batch are computed, where `L` is the
//! longest unpadded input in it. Masked keys get exactly zero attention
//! weight, so trailing padding can never influence real positions and
//! dropping it changes no output.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{join, normal_param, LayerNorm, Linear, Mode, Module, MultiHeadAttention};
use crate::tensor::{NamedTensor, Tensor};
use crate::tokenizer::{BpeVocab, TokenBatch};

/// The four stand-ins for the pretrained language models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncoderKind {
    /// Arabic monolingual.
    MiniArabert,
    /// English monolingual.
    MiniRoberta,
    /// Multilingual baseline; the shared encoder of the ensembles.
    MiniMbert,
    MiniXlmr,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::MiniArabert,
        EncoderKind::MiniRoberta,
        EncoderKind::MiniMbert,
        EncoderKind::MiniXlmr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::MiniArabert => "mini-arabert",
            EncoderKind::MiniRoberta => "mini-roberta",
            EncoderKind::MiniMbert => "mini-mbert",
            EncoderKind::MiniXlmr => "mini-xlmr",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown encoder `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 wide, 4 heads, 2 layers, 128-wide FFN.
    pub fn desk(kind: EncoderKind, vocab_size: usize) -> Self {
        EncoderConfig {
            kind,
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_positions: 256,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{}: {m}", self.kind)));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 5 || self.max_positions < 3 || self.d_ff == 0 {
            return bad("vocab_size, max_positions and d_ff are too small".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Closed-form parameter count of an encoder built from this config.
    pub fn parameter_count(&self) -> usize {
        let (v, d, f, p) = (self.vocab_size, self.d_model, self.d_ff, self.max_positions);
        let embeddings = v * d + p * d + 2 * d;
        let attention = 4 * (d * d + d);
        let ffn = d * f + f + f * d + d;
        let layer = 2 * d + attention + 2 * d + ffn;
        let pooler = d * d + d;
        embeddings + self.n_layers * layer + 2 * d + pooler
    }
}

pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl EncoderLayer {
    fn new(cfg: &EncoderConfig, rng: &mut dyn RngCore) -> Self {
        EncoderLayer {
            attn_norm: LayerNorm::new(cfg.d_model),
            attention: MultiHeadAttention::new(cfg.d_model, cfg.n_heads, rng),
            ffn_norm: LayerNorm::new(cfg.d_model),
            ffn_in: Linear::new(cfg.d_model, cfg.d_ff, rng),
            ffn_out: Linear::new(cfg.d_ff, cfg.d_model, rng),
        }
    }

    /// With `cls_only`, only position 0 attends and passes through the
    /// feed-forward block, giving `[batch, 1, d_model]`.
    fn forward(&self, x: &Tensor, mask: &[u8], dropout: f64, cls_only: bool, mode: &mut Mode) -> Result<Tensor> {
        let normed = self.attn_norm.forward(x)?;
        let (x, query) = if cls_only {
            (x.slice(1, 0, 1)?, normed.slice(1, 0, 1)?)
        } else {
            (x.clone(), normed.clone())
        };
        let attended = self.attention.forward(&query, &normed, &normed, mask)?.output;
        let h = x.add(&attended.dropout(dropout, mode.rng())?)?;
        let ff = self
            .ffn_out
            .forward(&self.ffn_in.forward(&self.ffn_norm.forward(&h)?)?.gelu()?)?;
        h.add(&ff.dropout(dropout, mode.rng())?)
    }
}

impl Module for EncoderLayer {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.attn_norm.visit_parameters(&join(prefix, "attn_norm"), out);
        self.attention.visit_parameters(&join(prefix, "attention"), out);
        self.ffn_norm.visit_parameters(&join(prefix, "ffn_norm"), out);
        self.ffn_in.visit_parameters(&join(prefix, "ffn_in"), out);
        self.ffn_out.visit_parameters(&join(prefix, "ffn_out"), out);
    }
}

pub struct EncoderOutput {
    /// `[batch, seq, d_model]`, where `seq` is the longest unpadded input.
    pub sequence_output: Tensor,
    /// `[batch, d_model]`, every entry in `(-1, 1)`.
    pub pooler_output: Tensor,
}

pub struct Encoder {
    config: EncoderConfig,
    tokenizer: BpeVocab,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub pooler: Linear,
}

impl Encoder {
    /// Builds a randomly initialized encoder. `config.vocab_size` must equal
    /// the tokenizer's size.
    pub fn new(config: EncoderConfig, tokenizer: BpeVocab, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != tokenizer.len() {
            return Err(Error::InvalidConfig(format!(
                "{}: vocab_size {} but tokenizer has {} entries",
                config.kind,
                config.vocab_size,
                tokenizer.len()
            )));
        }
        let d = config.d_model;
        Ok(Encoder {
            token_embedding: normal_param(&[config.vocab_size, d], rng),
            position_embedding: normal_param(&[config.max_positions, d], rng),
            embedding_norm: LayerNorm::new(d),
            layers: (0..config.n_layers).map(|_| EncoderLayer::new(&config, rng)).collect(),
            final_norm: LayerNorm::new(d),
            pooler: Linear::new(d, d, rng),
            config,
            tokenizer,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind
    }

    pub fn tokenizer(&self) -> &BpeVocab {
        &self.tokenizer
    }

    /// Tokenizes cleaned texts with this encoder's own vocabulary.
    pub fn tokenize<S: AsRef<str>>(&self, texts: &[S], max_seq_len: usize) -> Result<TokenBatch> {
        if max_seq_len > self.config.max_positions {
            return Err(Error::InvalidConfig(format!(
                "max_seq_len {max_seq_len} exceeds {} positions of {}",
                self.config.max_positions, self.config.kind
            )));
        }
        Ok(self.tokenizer.encode_batch(texts, max_seq_len))
    }

    /// Token plus position embeddings for `[batch, seq]` ids, normalized,
    /// with dropout in training mode.
    pub fn embed(&self, ids: &[u32], batch: usize, seq: usize, mode: &mut Mode) -> Result<Tensor> {
        if seq > self.config.max_positions {
            return Err(Error::shape("embed", &[batch, seq], &[self.config.max_positions]));
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let tok = self.token_embedding.embedding(&ids, &[batch, seq])?;
        let pos = self.position_embedding.embedding(&positions, &[batch, seq])?;
        self.embedding_norm
            .forward(&tok.add(&pos)?)?
            .dropout(self.config.dropout, mode.rng())
    }

    pub fn forward(&self, batch: &TokenBatch, mode: &mut Mode) -> Result<EncoderOutput> {
        let (sequence_output, pooler_output) = self.run(batch, false, mode)?;
        Ok(EncoderOutput {
            sequence_output,
            pooler_output,
        })
    }

    /// The pooler output of [`Encoder::forward`] alone. The last layer is
    /// evaluated at the CLS position only.
    pub fn pooled(&self, batch: &TokenBatch, mode: &mut Mode) -> Result<Tensor> {
        Ok(self.run(batch, true, mode)?.1)
    }

    fn run(&self, batch: &TokenBatch, cls_only: bool, mode: &mut Mode) -> Result<(Tensor, Tensor)> {
        if batch.vocab_id != self.tokenizer.fingerprint() {
            return Err(Error::VocabMismatch {
                expected: self.tokenizer.fingerprint(),
                found: batch.vocab_id,
            });
        }
        if batch.is_empty() {
            return Err(Error::shape("encoder_forward", &[0], &[]));
        }
        let b = batch.len();
        let seq = batch.inputs.iter().map(|t| t.len()).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(b * seq);
        let mut mask = Vec::with_capacity(b * seq);
        for input in &batch.inputs {
            ids.extend_from_slice(&input.input_ids[..seq]);
            mask.extend_from_slice(&input.attention_mask[..seq]);
        }
        let mut x = self.embed(&ids, b, seq, mode)?;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x, &mask, self.config.dropout, cls_only && i == last, mode)?;
        }
        if cls_only && self.layers.is_empty() {
            x = x.slice(1, 0, 1)?;
        }
        let sequence_output = self.final_norm.forward(&x)?;
        let cls = sequence_output.slice(1, 0, 1)?.reshape(&[b, self.config.d_model])?;
        let pooler_output = self.pooler.forward(&cls)?.tanh()?;
        Ok((sequence_output, pooler_output))
    }
}

impl Module for Encoder {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push((join(prefix, "token_embedding"), self.token_embedding.clone()));
        out.push((join(prefix, "position_embedding"), self.position_embedding.clone()));
        self.embedding_norm.visit_parameters(&join(prefix, "embedding_norm"), out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_parameters(&join(prefix, &format!("layers.{i}")), out);
        }
        self.final_norm.visit_parameters(&join(prefix, "final_norm"), out);
        self.pooler.visit_parameters(&join(prefix, "pooler"), out);
    }
}

/// An encoder with its own linear three-way head, fine-tuned alone.
pub struct SingleClassifier {
    pub encoder: Encoder,
    pub head: Linear,
}

impl SingleClassifier {
    pub fn new(encoder: Encoder, rng: &mut dyn RngCore) -> Self {
        let head = Linear::new(encoder.config().d_model, crate::data::Sentiment::COUNT, rng);
        SingleClassifier { encoder, head }
    }

    /// `[batch, 3]` logits from the pooler output.
    pub fn logits(&self, batch: &TokenBatch, mode: &mut Mode) -> Result<Tensor> {
        let pooled = self.encoder.pooled(batch, mode)?;
        self.head.forward(&pooled)
    }
}

impl Module for SingleClassifier {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.encoder
            .visit_parameters(&join(prefix, self.encoder.kind().as_str()), out);
        self.head.visit_parameters(&join(prefix, "head"), out);
    }
}
