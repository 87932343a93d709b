//! Multilingual tweet sentiment classification with miniature transformer
//! encoders and dual-encoder ensembles, from text cleaning to metrics.

pub mod config;
pub mod data;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cleaning.md")]
    mod cleaning {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/autograd.md")]
    mod autograd {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
