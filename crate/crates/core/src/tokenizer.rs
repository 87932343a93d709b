//! Byte-level byte-pair encoding.
//!
//! The base alphabet is the set of bytes seen in the training corpus, so
//! Arabic and Latin text need no special handling. Text is pre-tokenized
//! on whitespace; every word after the first keeps a leading space byte so
//! that word boundaries survive a round trip. Merges are learned greedily by
//! pair frequency, ties going to the lexicographically smallest
//! `(left, right)` byte strings.
//!
//! Ids 0 to 3 are reserved for `<pad>`, `<unk>`, `<cls>` and `<sep>`.
//!
//! # On-disk format
//!
//! A vocabulary is stored as two UTF-8 files in one directory:
//!
//! * `vocab.txt`: one token per line, the line index (from 0) is its id.
//!   Lines 0 to 3 are the special token names. Byte tokens are written
//!   through the printable byte-to-character table used by byte-level BPE
//!   (printable Latin-1 bytes map to themselves, the rest to U+0100 onward),
//!   so a space byte appears as `Ġ`.
//! * `merges.txt`: one `left right` pair per line in the same encoding, in
//!   the order the merges were learned.
//!
//! Both files end every line, including the last, with `\n`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<cls>", "<sep>"];
const N_SPECIAL: usize = SPECIALS.len();

static BYTE_TO_CHAR: LazyLock<[char; 256]> = LazyLock::new(|| {
    let printable = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            next += 1;
            char::from_u32(next - 1).unwrap()
        };
    }
    table
});

static CHAR_TO_BYTE: LazyLock<HashMap<char, u8>> =
    LazyLock::new(|| BYTE_TO_CHAR.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect());

fn bytes_to_display(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| BYTE_TO_CHAR[b as usize]).collect()
}

fn display_to_bytes(s: &str) -> Option<Vec<u8>> {
    s.chars().map(|c| CHAR_TO_BYTE.get(&c).copied()).collect()
}

/// Whitespace pre-tokenization; words after the first carry a leading space.
fn words(text: &str) -> impl Iterator<Item = Vec<u8>> + '_ {
    text.split_whitespace().enumerate().map(|(i, w)| {
        let mut bytes = Vec::with_capacity(w.len() + 1);
        if i > 0 {
            bytes.push(b' ');
        }
        bytes.extend_from_slice(w.as_bytes());
        bytes
    })
}

/// Fixed-length model input: `<cls> body <sep>` followed by padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedInput {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenizedInput {
    /// Number of real (unpadded) positions.
    pub fn len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A batch of inputs tagged with the fingerprint of the vocabulary that
/// produced it, so a model can refuse ids from a foreign vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub vocab_id: u64,
    pub inputs: Vec<TokenizedInput>,
}

impl TokenBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeVocab {
    /// Byte content of every non-special token, indexed by `id - 4`.
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    merge_rank: HashMap<(Vec<u8>, Vec<u8>), usize>,
    fingerprint: u64,
}

impl BpeVocab {
    fn from_parts(tokens: Vec<Vec<u8>>, merges: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), (i + N_SPECIAL) as u32).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate token `{}` in vocabulary",
                    bytes_to_display(t)
                )));
            }
        }
        for (l, r) in &merges {
            let joined = [l.as_slice(), r.as_slice()].concat();
            if !token_to_id.contains_key(&joined) {
                return Err(Error::InvalidConfig(format!(
                    "merge result `{}` missing from vocabulary",
                    bytes_to_display(&joined)
                )));
            }
        }
        let merge_rank = merges.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut vocab = BpeVocab {
            tokens,
            token_to_id,
            merges,
            merge_rank,
            fingerprint: 0,
        };
        let digest = Sha256::new()
            .chain_update(vocab.vocab_file().as_bytes())
            .chain_update(vocab.merges_file().as_bytes())
            .finalize();
        vocab.fingerprint = u64::from_be_bytes(digest[..8].try_into().unwrap());
        Ok(vocab)
    }

    /// Total vocabulary size including the four specials.
    pub fn len(&self) -> usize {
        self.tokens.len() + N_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Content hash identifying this vocabulary.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Learned merges, in order, as byte strings.
    pub fn merges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.merges
    }

    pub fn token_id(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Byte content of a non-special token.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        (id as usize)
            .checked_sub(N_SPECIAL)
            .and_then(|i| self.tokens.get(i))
            .map(Vec::as_slice)
    }

    /// Splits one pre-tokenized word into BPE pieces.
    fn split_word(&self, word: &[u8]) -> Vec<Vec<u8>> {
        let mut parts: Vec<Vec<u8>> = word.iter().map(|&b| vec![b]).collect();
        loop {
            let best = parts
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && &parts[i] == left && &parts[i + 1] == right {
                    merged.push([left.as_slice(), right.as_slice()].concat());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
    }

    /// Token ids of `text` without specials, padding or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        words(text)
            .flat_map(|w| self.split_word(&w))
            .map(|piece| self.token_id(&piece).unwrap_or(UNK))
            .collect()
    }

    /// `<cls> body <sep>` padded to `max_seq_len`; the body is truncated to
    /// `max_seq_len - 2` tokens.
    pub fn encode(&self, text: &str, max_seq_len: usize) -> TokenizedInput {
        assert!(max_seq_len >= 3, "max_seq_len must be at least 3");
        let mut body = self.tokenize(text);
        body.truncate(max_seq_len - 2);
        let mut input_ids = Vec::with_capacity(max_seq_len);
        input_ids.push(CLS);
        input_ids.extend(body);
        input_ids.push(SEP);
        let real = input_ids.len();
        input_ids.resize(max_seq_len, PAD);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(max_seq_len, 0);
        TokenizedInput {
            input_ids,
            attention_mask,
        }
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S], max_seq_len: usize) -> TokenBatch {
        TokenBatch {
            vocab_id: self.fingerprint,
            inputs: texts.iter().map(|t| self.encode(t.as_ref(), max_seq_len)).collect(),
        }
    }

    /// Inverse of [`encode`](Self::encode): specials are dropped and `<unk>`
    /// becomes U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                PAD | CLS | SEP => {}
                UNK => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                _ => bytes.extend_from_slice(self.token_bytes(id).ok_or(Error::IdOutOfRange {
                    id: id as usize,
                    size: self.len(),
                })?),
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn vocab_file(&self) -> String {
        let mut out = String::new();
        for s in SPECIALS {
            out.push_str(s);
            out.push('\n');
        }
        for t in &self.tokens {
            out.push_str(&bytes_to_display(t));
            out.push('\n');
        }
        out
    }

    pub fn merges_file(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(&bytes_to_display(l));
            out.push(' ');
            out.push_str(&bytes_to_display(r));
            out.push('\n');
        }
        out
    }

    /// Writes `vocab.txt` and `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("vocab.txt"), self.vocab_file())?;
        fs::write(dir.join("merges.txt"), self.merges_file())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = fs::read_to_string(dir.join("vocab.txt"))?;
        let merges = fs::read_to_string(dir.join("merges.txt"))?;
        Self::parse(&vocab, &merges)
    }

    pub fn parse(vocab: &str, merges: &str) -> Result<Self> {
        let bad = |what: String| Error::InvalidConfig(format!("tokenizer files: {what}"));
        let lines: Vec<&str> = vocab.lines().collect();
        if lines.len() < N_SPECIAL || lines[..N_SPECIAL] != SPECIALS {
            return Err(bad("vocab.txt must start with the four special tokens".into()));
        }
        let tokens = lines[N_SPECIAL..]
            .iter()
            .map(|l| display_to_bytes(l).ok_or_else(|| bad(format!("bad token `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        let merges = merges
            .lines()
            .map(|l| {
                let (a, b) = l.split_once(' ').ok_or_else(|| bad(format!("bad merge `{l}`")))?;
                Ok((
                    display_to_bytes(a).ok_or_else(|| bad(format!("bad merge `{l}`")))?,
                    display_to_bytes(b).ok_or_else(|| bad(format!("bad merge `{l}`")))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(tokens, merges)
    }
}

/// Learns a byte-level BPE vocabulary of at most `vocab_size` entries
/// (specials included). Training stops early once no adjacent pair occurs
/// at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<BpeVocab> {
    let mut word_freq: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for text in corpus {
        for w in words(text.as_ref()) {
            *word_freq.entry(w).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut alphabet: Vec<u8> = word_freq.keys().flatten().copied().collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    if vocab_size < N_SPECIAL + alphabet.len() {
        return Err(Error::InvalidConfig(format!(
            "vocab_size {vocab_size} is below the {} specials and base bytes",
            N_SPECIAL + alphabet.len()
        )));
    }

    let mut tokens: Vec<Vec<u8>> = alphabet.iter().map(|&b| vec![b]).collect();
    let mut known: HashMap<Vec<u8>, ()> = tokens.iter().map(|t| (t.clone(), ())).collect();
    let mut merges = Vec::new();
    let mut corpus_words: Vec<(Vec<Vec<u8>>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| (w.iter().map(|&b| vec![b]).collect(), f))
        .collect();

    while tokens.len() + N_SPECIAL < vocab_size {
        let mut counts: HashMap<(&[u8], &[u8]), usize> = HashMap::new();
        for (parts, freq) in &corpus_words {
            for w in parts.windows(2) {
                *counts.entry((&w[0], &w[1])).or_insert(0) += freq;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (left, right) = (l.to_vec(), r.to_vec());
        let joined = [left.as_slice(), right.as_slice()].concat();
        for (parts, _) in &mut corpus_words {
            let mut i = 0;
            while i + 1 < parts.len() {
                if parts[i] == left && parts[i + 1] == right {
                    parts[i] = joined.clone();
                    parts.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(joined.clone(), ()).is_none() {
            tokens.push(joined);
        }
        merges.push((left, right));
    }
    BpeVocab::from_parts(tokens, merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // Pair counts over "aaab" x2: (a,a)=4, (a,b)=2.
        let v = train_bpe(&["aaab", "aaab"], 7).unwrap();
        assert_eq!(v.merges()[0], (b"a".to_vec(), b"a".to_vec()));
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn single_character_corpus_has_no_merges() {
        let v = train_bpe(&["x"], 5).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.vocab_file(), "<pad>\n<unk>\n<cls>\n<sep>\nx\n");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(train_bpe(&["", "  "], 10), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn vocab_size_below_alphabet_is_rejected() {
        assert!(train_bpe(&["abc"], 6).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur twice; ("a","b") sorts first.
        let v = train_bpe(&["cd", "ab", "cd", "ab"], 9).unwrap();
        assert_eq!(v.merges()[0], (b"a".to_vec(), b"b".to_vec()));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["the cat sat", "the hat", "مرحبا بالعالم", "مرحبا"];
        let a = train_bpe(&corpus, 40).unwrap();
        let b = train_bpe(&corpus, 40).unwrap();
        assert_eq!(a.vocab_file(), b.vocab_file());
        assert_eq!(a.merges_file(), b.merges_file());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn empty_text_encodes_to_cls_sep() {
        let v = train_bpe(&["aaab"], 8).unwrap();
        let e = v.encode("", 5);
        assert_eq!(e.input_ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(e.attention_mask, vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn shortest_length_truncates_to_one_token() {
        let v = train_bpe(&["ab ab"], 8).unwrap();
        let e = v.encode("ab ab ab", 3);
        assert_eq!(e.input_ids[0], CLS);
        assert_eq!(e.input_ids[2], SEP);
        assert_eq!(e.attention_mask, vec![1, 1, 1]);
    }

    #[test]
    fn unknown_bytes_map_to_unk() {
        let v = train_bpe(&["ab"], 6).unwrap();
        assert_eq!(v.tokenize("az"), vec![v.token_id(b"a").unwrap(), UNK]);
    }

    #[test]
    fn decode_specials_and_range() {
        let v = train_bpe(&["aaab", "aaab"], 7).unwrap();
        assert_eq!(v.decode(&[CLS, SEP]).unwrap(), "");
        assert_eq!(v.decode(&[PAD]).unwrap(), "");
        assert!(matches!(v.decode(&[99]), Err(Error::IdOutOfRange { .. })));
        let e = v.encode("aaab", 8);
        assert_eq!(v.decode(&e.input_ids).unwrap(), "aaab");
    }

    #[test]
    fn files_round_trip() {
        let v = train_bpe(&["hello world", "héllo wörld", "مرحبا"], 60).unwrap();
        let back = BpeVocab::parse(&v.vocab_file(), &v.merges_file()).unwrap();
        assert_eq!(back, v);
        assert!(v.vocab_file().contains('Ġ'));
    }

    proptest! {
        #[test]
        fn round_trip_on_training_alphabet(
            corpus in proptest::collection::vec("[abcé ]{1,12}", 1..6),
            probe in "[abcé ]{0,20}",
            size in 12usize..40,
        ) {
            let joined: String = corpus.concat();
            prop_assume!(joined.contains('a') && joined.contains('b')
                && joined.contains('c') && joined.contains('é')
                && corpus.iter().any(|c| c.split_whitespace().count() > 1));
            let v = train_bpe(&corpus, size).unwrap();
            let e = v.encode(&probe, 64);
            let normalized = probe.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(v.decode(&e.input_ids).unwrap(), normalized);
        }

        #[test]
        fn encode_invariants(text in any::<String>(), len in 3usize..24) {
            let v = train_bpe(&["some training text", "نص عربي"], 48).unwrap();
            let e = v.encode(&text, len);
            prop_assert_eq!(e.input_ids.len(), len);
            prop_assert_eq!(e.attention_mask.len(), len);
            prop_assert_eq!(e.input_ids[0], CLS);
            let real = e.len();
            prop_assert!(real >= 2);
            prop_assert_eq!(e.input_ids[real - 1], SEP);
            prop_assert!(e.attention_mask[..real].iter().all(|&m| m == 1));
            prop_assert!(e.attention_mask[real..].iter().all(|&m| m == 0));
            for (id, m) in e.input_ids.iter().zip(&e.attention_mask) {
                prop_assert_eq!(*m == 1, *id != PAD);
                prop_assert!((*id as usize) < v.len());
            }
        }
    }
}
