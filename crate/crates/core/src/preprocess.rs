//! Tweet cleaning.
//!
//! [`clean_text`] applies four passes in a fixed order:
//!
//! 1. URL removal: `http://`, `https://` or `www.` followed by non-whitespace.
//! 2. Invisible characters: C0/C1 controls, zero-width space/joiner/non-joiner,
//!    BOM, and bidirectional marks and controls are deleted. Tab and newline
//!    become spaces so that word boundaries survive.
//! 3. Symbols: every character in the Unicode Symbol (`S*`) or Punctuation
//!    (`P*`) categories is deleted, except `@`, `#`, `_` and apostrophes.
//!    Mentions and hashtags therefore stay intact. Emoji are `So` and are
//!    removed; `-` is `Pd` and is removed.
//! 4. Whitespace runs collapse to a single space; the ends are trimmed.
//!
//! Letters, marks and digits of any script are never touched, so Arabic and
//! Latin text go through the same path. No case folding happens here.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").expect("valid URL pattern"));

static INVISIBLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\p{Cc}\x{200B}-\x{200F}\x{FEFF}\x{061C}\x{202A}-\x{202E}\x{2066}-\x{2069}]")
        .expect("valid invisible-character class")
});

// `@ # _` and the ASCII and typographic apostrophes carry meaning in tweets.
static SYMBOL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[[\p{S}\p{P}]--[@#_'\x{2019}]]").expect("valid symbol class")
});

/// Tweet text after [`clean_text`]: no URLs, invisible characters or
/// symbols, single-spaced and trimmed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn clean_text(raw: &str) -> CleanText {
    let text = URL.replace_all(raw, "");
    let text = text.replace(['\t', '\n'], " ");
    let text = INVISIBLE.replace_all(&text, "");
    let text = SYMBOL.replace_all(&text, "");
    CleanText(text.split_whitespace().collect::<Vec<_>>().join(" "))
}
