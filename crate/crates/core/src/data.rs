//! Corpus loading, label harmonization and split construction.
//!
//! Two on-disk row formats are read, both UTF-8 and tab-separated:
//!
//! * SemEval: `id<TAB>label<TAB>text`, label one of `positive`, `negative`,
//!   `neutral` in any case. The text is everything after the second tab.
//! * ASTD: `text<TAB>label`, label one of `OBJ`, `POS`, `NEG`, `NEUTRAL`.
//!   The label is everything after the last tab. `OBJ` rows are dropped and
//!   ids are synthesized as `astd-<line>`.
//!
//! Blank lines are skipped in both formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::clean_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    Ar,
    En,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::Ar, Language::En];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Ar => "ar",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" => Ok(Language::Ar),
            "en" => Ok(Language::En),
            other => Err(Error::UnknownLanguage(other.to_string())),
        }
    }
}

/// Class indices are fixed: Positive 0, Negative 1, Neutral 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const COUNT: usize = 3;
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Sentiment> {
        Sentiment::ALL.get(i).copied()
    }

    /// Lowercase name as written in SemEval files.
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }

    fn parse_semeval(label: &str) -> Option<Sentiment> {
        match label.to_ascii_lowercase().as_str() {
            "positive" => Some(Sentiment::Positive),
            "negative" => Some(Sentiment::Negative),
            "neutral" => Some(Sentiment::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    /// Raw text as read from disk.
    pub text: String,
    pub language: Language,
    pub label: Sentiment,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetBundle {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    /// Example id to source tag (the file stem it came from).
    pub provenance: BTreeMap<String, String>,
}

impl DatasetBundle {
    /// Errors unless every split is non-empty.
    pub fn require_runnable(&self) -> Result<()> {
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            if split.is_empty() {
                return Err(Error::MissingData(format!("{name} split is empty")));
            }
        }
        Ok(())
    }
}

fn source_tag(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::MissingData(format!("cannot read {}: {e}", path.display()))
    })
}

fn malformed(path: &Path, line: usize, reason: &str) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

pub fn load_semeval(path: &Path, language: Language) -> Result<Vec<Example>> {
    let content = read_lines(path)?;
    let mut out = Vec::new();
    for (i, row) in content.lines().enumerate() {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let mut fields = row.splitn(3, '\t');
        let (Some(id), Some(label), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(path, line, "expected `id<TAB>label<TAB>text`"));
        };
        if id.trim().is_empty() {
            return Err(malformed(path, line, "empty id"));
        }
        let label = Sentiment::parse_semeval(label.trim()).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            line,
            label: label.to_string(),
        })?;
        out.push(Example {
            id: id.trim().to_string(),
            text: text.to_string(),
            language,
            label,
        });
    }
    Ok(out)
}

pub fn load_astd(path: &Path) -> Result<Vec<Example>> {
    let content = read_lines(path)?;
    let mut out = Vec::new();
    for (i, row) in content.lines().enumerate() {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let Some((text, label)) = row.rsplit_once('\t') else {
            return Err(malformed(path, line, "expected `text<TAB>label`"));
        };
        let label = match label.trim() {
            "OBJ" => continue,
            "POS" => Sentiment::Positive,
            "NEG" => Sentiment::Negative,
            "NEUTRAL" => Sentiment::Neutral,
            other => {
                return Err(Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line,
                    label: other.to_string(),
                })
            }
        };
        out.push(Example {
            id: format!("astd-{line}"),
            text: text.to_string(),
            language: Language::Ar,
            label,
        });
    }
    Ok(out)
}

/// Key under which two texts count as the same tweet.
pub fn dedup_key(text: &str) -> String {
    clean_text(text).as_str().to_lowercase()
}

fn check_unique_ids<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<()> {
    let mut seen = HashSet::new();
    for e in examples {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::DuplicateId(e.id.clone()));
        }
    }
    Ok(())
}

fn check_no_test_leak(test: &[Example], others: &[&[Example]]) -> Result<()> {
    let keys: HashSet<String> = test.iter().map(|e| dedup_key(&e.text)).collect();
    for e in others.iter().flat_map(|s| s.iter()) {
        if keys.contains(&dedup_key(&e.text)) {
            return Err(Error::DuplicateTestLeak { text: e.text.clone() });
        }
    }
    Ok(())
}

/// Arabic splits: the SemEval Arabic training files and ASTD are merged,
/// deduplicated by [`dedup_key`] (first occurrence wins), shuffled with
/// `seed`, and split so that dev gets `floor(N / 10)` examples and train the
/// rest. The official test file is loaded separately and never merged.
pub fn build_arabic_bundle(
    semeval_paths: &[PathBuf],
    astd_path: &Path,
    test_path: &Path,
    seed: u64,
) -> Result<DatasetBundle> {
    let mut provenance = BTreeMap::new();
    let mut merged = Vec::new();
    let mut sources: Vec<(Vec<Example>, String)> = Vec::new();
    for path in semeval_paths {
        sources.push((load_semeval(path, Language::Ar)?, source_tag(path)));
    }
    sources.push((load_astd(astd_path)?, source_tag(astd_path)));

    let mut seen = HashSet::new();
    for (examples, tag) in sources {
        for e in examples {
            if seen.insert(dedup_key(&e.text)) {
                provenance.insert(e.id.clone(), tag.clone());
                merged.push(e);
            }
        }
    }
    check_unique_ids(&merged)?;

    let test = load_semeval(test_path, Language::Ar)?;
    check_unique_ids(&test)?;
    check_no_test_leak(&test, &[&merged])?;
    let test_tag = source_tag(test_path);
    for e in &test {
        if provenance.insert(e.id.clone(), test_tag.clone()).is_some() {
            return Err(Error::DuplicateId(e.id.clone()));
        }
    }

    merged.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev_len = merged.len() / 10;
    let dev = merged.split_off(merged.len() - dev_len);
    Ok(DatasetBundle {
        train: merged,
        dev,
        test,
        provenance,
    })
}

/// English splits: train is every file in `train_paths` that is not also in
/// `dev_paths`, dev is the `dev_paths` files, test is `test_path`. Order
/// follows the argument order and file order.
pub fn build_english_bundle(
    train_paths: &[PathBuf],
    dev_paths: &[PathBuf],
    test_path: &Path,
) -> Result<DatasetBundle> {
    let mut provenance = BTreeMap::new();
    let mut load = |paths: &mut dyn Iterator<Item = &PathBuf>| -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for path in paths {
            let tag = source_tag(path);
            for e in load_semeval(path, Language::En)? {
                if provenance.insert(e.id.clone(), tag.clone()).is_some() {
                    return Err(Error::DuplicateId(e.id));
                }
                out.push(e);
            }
        }
        Ok(out)
    };
    let excluded: HashSet<&PathBuf> = dev_paths.iter().collect();
    let train = load(&mut train_paths.iter().filter(|p| !excluded.contains(p)))?;
    let dev = load(&mut dev_paths.iter())?;
    let test = load(&mut std::iter::once(&test_path.to_path_buf()))?;
    check_no_test_leak(&test, &[&train, &dev])?;
    Ok(DatasetBundle {
        train,
        dev,
        test,
        provenance,
    })
}

/// Writes examples as SemEval rows with cleaned text.
pub fn write_split(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&format!("{}\t{}\t{}\n", e.id, e.label, clean_text(&e.text)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Counts per class, indexed by [`Sentiment::index`].
pub fn class_counts(examples: &[Example]) -> [usize; 3] {
    let mut counts = [0; 3];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    counts
}

/// Examples grouped by language, preserving order within each group.
pub fn by_language(examples: &[Example]) -> HashMap<Language, Vec<Example>> {
    let mut out: HashMap<Language, Vec<Example>> = HashMap::new();
    for e in examples {
        out.entry(e.language).or_default().push(e.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn semeval_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "a.tsv", "1\tpositive\tgood day\n2\tNEGATIVE\tbad\tday\n\n");
        let ex = load_semeval(&p, Language::En).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!((ex[0].id.as_str(), ex[0].label), ("1", Sentiment::Positive));
        assert_eq!(ex[1].text, "bad\tday");
        let p = file(&dir, "b.tsv", "1\tpositive\tok\n2\tobjective\tx\n");
        match load_semeval(&p, Language::En) {
            Err(Error::UnknownLabel { line, label, .. }) => assert_eq!((line, label.as_str()), (2, "objective")),
            other => panic!("{other:?}"),
        }
        let p = file(&dir, "c.tsv", "");
        assert!(load_semeval(&p, Language::En).unwrap().is_empty());
        let p = file(&dir, "d.tsv", "1\tpositive\n");
        assert!(matches!(load_semeval(&p, Language::En), Err(Error::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn astd_drops_objective() {
        let dir = tempfile::tempdir().unwrap();
        let labels = ["OBJ", "POS", "NEG", "OBJ", "NEUTRAL", "OBJ", "POS", "NEG", "OBJ", "NEUTRAL"];
        let body: String = labels.iter().enumerate().map(|(i, l)| format!("نص {i}\t{l}\n")).collect();
        let ex = load_astd(&file(&dir, "astd.tsv", &body)).unwrap();
        assert_eq!(ex.len(), 6);
        assert_eq!(ex[0].id, "astd-2");
        let ex = load_astd(&file(&dir, "one.tsv", "جيد\tPOS\n")).unwrap();
        assert_eq!((ex[0].label, ex[0].language), (Sentiment::Positive, Language::Ar));
        assert!(load_astd(&file(&dir, "obj.tsv", "a\tOBJ\nb\tOBJ\n")).unwrap().is_empty());
        assert!(matches!(
            load_astd(&file(&dir, "bad.tsv", "a\tPOSITIVE\n")),
            Err(Error::UnknownLabel { .. })
        ));
    }

    fn arabic_inputs(dir: &tempfile::TempDir, n: usize, leak: bool) -> (Vec<PathBuf>, PathBuf, PathBuf) {
        let half = n / 2;
        let a: String = (0..half).map(|i| format!("a{i}\tpositive\tكلمة {i}\n")).collect();
        let astd: String = (half..n).map(|i| format!("كلمة {i}\tNEG\n")).collect();
        let mut test = "t1\tneutral\tاختبار\n".to_string();
        if leak {
            test.push_str("t2\tpositive\tكلمة 3!\n");
        }
        (
            vec![file(dir, "ar-a.tsv", &a)],
            file(dir, "astd.tsv", &astd),
            file(dir, "ar-test.tsv", &test),
        )
    }

    #[test]
    fn arabic_split_arithmetic_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let (sem, astd, test) = arabic_inputs(&dir, 1000, false);
        let b = build_arabic_bundle(&sem, &astd, &test, 7).unwrap();
        assert_eq!((b.train.len(), b.dev.len(), b.test.len()), (900, 100, 1));
        assert_eq!(b, build_arabic_bundle(&sem, &astd, &test, 7).unwrap());
        assert_ne!(b.train, build_arabic_bundle(&sem, &astd, &test, 8).unwrap().train);
        assert_eq!(b.provenance["astd-1"], "astd");
        assert_eq!(b.provenance["t1"], "ar-test");
    }

    #[test]
    fn planted_test_duplicate_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (sem, astd, test) = arabic_inputs(&dir, 20, true);
        assert!(matches!(
            build_arabic_bundle(&sem, &astd, &test, 0),
            Err(Error::DuplicateTestLeak { .. })
        ));
    }

    #[test]
    fn duplicates_across_sources_are_merged() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(&dir, "a.tsv", "1\tpositive\tرائع جدا\n2\tnegative\tسيء\n");
        let astd = file(&dir, "astd.tsv", "رائع   جدا!!\tPOS\nجديد\tNEUTRAL\n");
        let test = file(&dir, "t.tsv", "9\tneutral\tلا\n");
        let b = build_arabic_bundle(&[a], &astd, &test, 1).unwrap();
        assert_eq!(b.train.len() + b.dev.len(), 3);
    }

    #[test]
    fn english_split_excludes_dev_files() {
        let dir = tempfile::tempdir().unwrap();
        let t13 = file(&dir, "2013-train.tsv", "1\tpositive\tgood\n2\tneutral\tmeh\n");
        let d13 = file(&dir, "2013-test.tsv", "3\tnegative\tbad\n");
        let d14 = file(&dir, "2014-test.tsv", "4\tpositive\tnice\n5\tpositive\tgreat\n");
        let t16 = file(&dir, "2016-train.tsv", "6\tnegative\tawful\n");
        let test = file(&dir, "2017-test.tsv", "7\tneutral\tok then\n");
        let all = vec![t13.clone(), d13.clone(), d14.clone(), t16.clone()];
        let dev = vec![d13, d14];
        let b = build_english_bundle(&all, &dev, &test).unwrap();
        assert_eq!((b.train.len(), b.dev.len(), b.test.len()), (3, 3, 1));
        let train_ids: HashSet<_> = b.train.iter().map(|e| &e.id).collect();
        assert!(b.dev.iter().all(|e| !train_ids.contains(&e.id)));
        assert_eq!(b, build_english_bundle(&all, &dev, &test).unwrap());

        let leak = file(&dir, "leak.tsv", "8\tneutral\tGOOD\n");
        assert!(matches!(
            build_english_bundle(&all, &dev, &leak),
            Err(Error::DuplicateTestLeak { .. })
        ));
    }

    #[test]
    fn language_and_label_names() {
        assert_eq!("ar".parse::<Language>().unwrap(), Language::Ar);
        assert!(matches!("fr".parse::<Language>(), Err(Error::UnknownLanguage(_))));
        for s in Sentiment::ALL {
            assert_eq!(Sentiment::from_index(s.index()), Some(s));
            assert_eq!(Sentiment::parse_semeval(s.as_str()), Some(s));
        }
    }
}
