//! Layers shared by the encoder and the ensemble heads.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{NamedTensor, Tensor};

/// Standard deviation of the normal initializer for weight matrices.
pub const INIT_STD: f64 = 0.02;

/// Whether a forward pass trains (dropout active, drawing from the given
/// generator) or evaluates.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match self {
            Mode::Eval => None,
            Mode::Train(rng) => Some(&mut **rng),
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Anything that owns trainable parameters.
pub trait Module {
    /// Pushes every parameter, named `prefix` + local path, in a fixed order.
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>);

    fn named_parameters(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit_parameters("", &mut out);
        out
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn normal_param(shape: &[usize], rng: &mut dyn RngCore) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::parameter(shape, data).expect("finite init")
}

pub(crate) fn const_param(shape: &[usize], value: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter(shape, vec![value; n]).expect("finite init")
}

/// `y = x W + b` over the last dimension.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        Linear {
            weight: normal_param(&[input, output], rng),
            bias: const_param(&[output], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Module for Linear {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: const_param(&[dim], 1.0),
            bias: const_param(&[dim], 0.0),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Output of [`MultiHeadAttention::forward`].
pub struct Attention {
    pub output: Tensor,
    /// Softmax weights, `[batch, heads, queries, keys]`.
    pub weights: Tensor,
}

/// Scaled dot-product attention over `heads` subspaces of width
/// `dim / heads`, followed by an output projection.
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut dyn RngCore) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
        }
    }

    /// `[batch, seq, dim] -> [batch, heads, seq, dim / heads]`
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        x.reshape(&[b, s, self.heads, d / self.heads])?.permute(&[0, 2, 1, 3])
    }

    /// `q`, `k`, `v` are `[batch, seq, dim]`; `key_mask` holds one 0/1 flag
    /// per `(batch, key)` and masked keys receive no attention.
    pub fn forward(&self, q: &Tensor, k: &Tensor, v: &Tensor, key_mask: &[u8]) -> Result<Attention> {
        let shape = q.shape();
        if shape.len() != 3 || k.shape() != v.shape() || k.shape()[0] != shape[0] || k.shape()[2] != shape[2] {
            return Err(crate::Error::shape("multi_head_attention", shape, k.shape()));
        }
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let head_dim = d / self.heads;
        let qh = self.split_heads(&self.query.forward(q)?)?;
        let kh = self.split_heads(&self.key.forward(k)?)?;
        let vh = self.split_heads(&self.value.forward(v)?)?;
        let scores = qh
            .bmm(&kh.transpose()?)?
            .scale(1.0 / (head_dim as f64).sqrt())?
            .mask_keys(key_mask)?;
        let weights = scores.softmax(3)?;
        let context = weights.bmm(&vh)?.permute(&[0, 2, 1, 3])?.reshape(&[b, s, d])?;
        Ok(Attention {
            output: self.output.forward(&context)?,
            weights,
        })
    }
}

impl Module for MultiHeadAttention {
    fn visit_parameters(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.query.visit_parameters(&join(prefix, "query"), out);
        self.key.visit_parameters(&join(prefix, "key"), out);
        self.value.visit_parameters(&join(prefix, "value"), out);
        self.output.visit_parameters(&join(prefix, "output"), out);
    }
}
