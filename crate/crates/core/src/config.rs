//! Experiment configuration.
//!
//! Config files are flat UTF-8 text, one `key = value` per line. Blank lines
//! and lines starting with `#` are ignored, surrounding whitespace is
//! trimmed, and a later assignment to the same key replaces an earlier one.
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `setup` | `1`, `2`, `3` | required |
//! | `model` | `mini-arabert`, `mini-roberta`, `mini-mbert`, `mini-xlmr`, `ensemble-a`, `ensemble-b` | required |
//! | `loss` | `bce_logits`, `cross_entropy` | required |
//! | `language` | `ar`, `en` (setups 1 and 3 only) | none |
//! | `lr` | float | `2e-5` |
//! | `batch_size` | integer | required |
//! | `epochs` | integer | required |
//! | `max_seq_len` | integer | `256` |
//! | `seed` | integer | `42` |
//! | `vocab_size` | BPE target size | `2048` |
//! | `dropout` | float in `[0, 1)` | `0.1` |
//!
//! Setup 1 fine-tunes one encoder with BCE-with-logits in batches of 16.
//! Setups 2 and 3 train an ensemble with cross entropy in batches of 24.
//! Any other pairing is a [`Error::ConfigMismatch`]. The per-setup epoch
//! counts (3 and 2), the learning rate and `max_seq_len` may be overridden;
//! [`ExperimentConfig::overrides`] lists the ones that were.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::data::Language;
use crate::encoder::EncoderKind;
use crate::ensemble::Variant;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 2e-5;
pub const DEFAULT_MAX_SEQ_LEN: usize = 256;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_VOCAB_SIZE: usize = 2048;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    BceLogits,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BceLogits => "bce_logits",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce_logits" => Ok(LossKind::BceLogits),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::InvalidConfig(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelId {
    Single(EncoderKind),
    Ensemble(Variant),
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Single(kind) => write!(f, "{kind}"),
            ModelId::Ensemble(v) => write!(f, "ensemble-{v}"),
        }
    }
}

impl ModelId {
    /// Encoders the model is built from.
    pub fn encoders(self) -> Vec<EncoderKind> {
        match self {
            ModelId::Single(kind) => vec![kind],
            ModelId::Ensemble(_) => vec![EncoderKind::MiniArabert, EncoderKind::MiniRoberta, EncoderKind::MiniMbert],
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("ensemble-") {
            Some(v) => Ok(ModelId::Ensemble(v.parse()?)),
            None => Ok(ModelId::Single(s.parse()?)),
        }
    }
}

/// Hyperparameters of one of the three fixed training regimes.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub setup: u8,
    pub model: ModelId,
    pub loss: LossKind,
    /// Training language for setups 1 and 3; `None` for setup 2.
    pub language: Option<Language>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub dropout: f64,
}

/// Batch size and epoch count prescribed for `setup`.
pub fn paper_schedule(setup: u8) -> Option<(usize, usize)> {
    match setup {
        1 => Some((16, 3)),
        2 | 3 => Some((24, 2)),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Parses config text. Only the grammar and the value types are checked
    /// here; call [`Self::validate`] for the setup invariants.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        Self::from_pairs(&map)
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        const KNOWN: [&str; 11] = [
            "setup", "model", "loss", "language", "lr", "batch_size", "epochs", "max_seq_len",
            "seed", "vocab_size", "dropout",
        ];
        if let Some(k) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::InvalidConfig(format!("unknown key `{k}`")));
        }
        let required = |key: &str| {
            map.get(key)
                .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
        };
        let language = map.get("language").map(|s| s.parse()).transpose()?;
        Ok(ExperimentConfig {
            setup: value(map, "setup", required("setup")?)?,
            model: required("model")?.parse()?,
            loss: required("loss")?.parse()?,
            language,
            lr: optional(map, "lr", DEFAULT_LR)?,
            batch_size: value(map, "batch_size", required("batch_size")?)?,
            epochs: value(map, "epochs", required("epochs")?)?,
            max_seq_len: optional(map, "max_seq_len", DEFAULT_MAX_SEQ_LEN)?,
            seed: optional(map, "seed", DEFAULT_SEED)?,
            vocab_size: optional(map, "vocab_size", DEFAULT_VOCAB_SIZE)?,
            dropout: optional(map, "dropout", DEFAULT_DROPOUT)?,
        })
    }

    /// Checks the setup/loss/batch-size/model pairing and value ranges.
    pub fn validate(&self) -> Result<()> {
        let mismatch = |m: String| Err(Error::ConfigMismatch(format!("setup {}: {m}", self.setup)));
        let Some((batch, _)) = paper_schedule(self.setup) else {
            return Err(Error::InvalidConfig(format!("setup must be 1, 2 or 3, got {}", self.setup)));
        };
        let want_loss = if self.setup == 1 {
            LossKind::BceLogits
        } else {
            LossKind::CrossEntropy
        };
        if self.loss != want_loss {
            return mismatch(format!("loss must be {}, got {}", want_loss.as_str(), self.loss.as_str()));
        }
        if self.batch_size != batch {
            return mismatch(format!("batch_size must be {batch}, got {}", self.batch_size));
        }
        match (self.setup, self.model, self.language) {
            (1, ModelId::Single(_), Some(_)) | (3, ModelId::Ensemble(_), Some(_)) => {}
            (2, ModelId::Ensemble(_), None) => {}
            (1, ModelId::Ensemble(_), _) => return mismatch("needs a single encoder model".into()),
            (2 | 3, ModelId::Single(_), _) => return mismatch("needs model ensemble-a or ensemble-b".into()),
            (2, _, Some(_)) => return mismatch("trains on both languages; remove `language`".into()),
            _ => return mismatch("needs `language = ar` or `language = en`".into()),
        }
        if self.epochs == 0 || self.max_seq_len < 3 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "epochs must be positive, max_seq_len at least 3, lr positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Keys whose value departs from the prescribed schedule, as
    /// `key = value (expected)` strings.
    pub fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some((_, epochs)) = paper_schedule(self.setup) {
            if self.epochs != epochs {
                out.push(format!("epochs = {} ({epochs})", self.epochs));
            }
        }
        if self.lr != DEFAULT_LR {
            out.push(format!("lr = {:e} ({DEFAULT_LR:e})", self.lr));
        }
        if self.max_seq_len != DEFAULT_MAX_SEQ_LEN {
            out.push(format!("max_seq_len = {} ({DEFAULT_MAX_SEQ_LEN})", self.max_seq_len));
        }
        out
    }

    /// Canonical config text; [`Self::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = format!("setup = {}\nmodel = {}\nloss = {}\n", self.setup, self.model, self.loss.as_str());
        if let Some(lang) = self.language {
            out.push_str(&format!("language = {lang}\n"));
        }
        out.push_str(&format!(
            "lr = {:e}\nbatch_size = {}\nepochs = {}\nmax_seq_len = {}\nseed = {}\nvocab_size = {}\ndropout = {}\n",
            self.lr, self.batch_size, self.epochs, self.max_seq_len, self.seed, self.vocab_size, self.dropout
        ));
        out
    }
}

/// `key = value` lines into a map; later keys win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key or value", i + 1)));
        }
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn value<T: FromStr>(_map: &BTreeMap<String, String>, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{raw}`")))
}

fn optional<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        Some(raw) => value(map, key, raw),
        None => Ok(default),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SETUP1: &str = "# baseline\nsetup = 1\nmodel = mini-mbert\nloss = bce_logits\nlanguage = en\n\
                          batch_size = 16\nepochs = 3\n";

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::parse(SETUP1).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lr, 2e-5);
        assert_eq!(cfg.max_seq_len, 256);
        assert!(cfg.overrides().is_empty());
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn loss_pairing_is_enforced() {
        let cfg = ExperimentConfig::parse(&format!("{SETUP1}loss = cross_entropy\n")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ConfigMismatch(_))));
        let cfg = ExperimentConfig::parse(&format!("{SETUP1}batch_size = 24\n")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ConfigMismatch(_))));
        let cfg = ExperimentConfig::parse(&format!("{SETUP1}model = ensemble-a\n")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn desk_overrides_are_listed_not_rejected() {
        let cfg = ExperimentConfig::parse(&format!("{SETUP1}epochs = 200\nlr = 1e-3\n")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.overrides().len(), 2);
    }

    #[test]
    fn merged_setup_has_no_language() {
        let text = "setup = 2\nmodel = ensemble-b\nloss = cross_entropy\nbatch_size = 24\nepochs = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model, ModelId::Ensemble(Variant::B));
        let cfg = ExperimentConfig::parse(&format!("{text}language = ar\n")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grammar_errors() {
        assert!(ExperimentConfig::parse(&format!("{SETUP1}colour = red\n")).is_err());
        assert!(parse_pairs("just words").is_err());
        assert!(ExperimentConfig::parse(&format!("{SETUP1}epochs = three\n")).is_err());
        assert!(ExperimentConfig::parse("setup = 1\n").is_err());
    }
}
