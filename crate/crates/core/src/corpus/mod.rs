//! Multi-parallel verse corpus: loading, vocabulary, held-out split and
//! language-uniform batch sampling.

mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub use vocab::{build_vocabulary, Vocabulary, BOS, DEFAULT_VOCAB_CAP, EOS, NUM_RESERVED, UNK};

pub const DEFAULT_HOLDOUT: usize = 128;
pub const DEFAULT_MAX_LEN: usize = 512;

/// Verse texts keyed by `(language, verse-id)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerseCorpus {
    texts: BTreeMap<String, BTreeMap<String, String>>,
    sources: BTreeMap<String, Vec<String>>,
}

/// `Some(base)` when `id` carries a duplicate-translation suffix `#k` (k ≥ 2).
pub fn duplicate_base(id: &str) -> Option<&str> {
    let (base, k) = id.rsplit_once('#')?;
    let k: usize = k.parse().ok()?;
    (k >= 2 && !base.is_empty()).then_some(base)
}

impl VerseCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a verse. An id already present for the language is kept and the
    /// new text goes under the next free `#k` suffix. Returns the id used.
    pub fn insert(&mut self, lang: &str, verse: &str, text: &str) -> String {
        let verses = self.texts.entry(lang.to_string()).or_default();
        let mut key = verse.to_string();
        let mut k = 2;
        while verses.contains_key(&key) {
            key = format!("{verse}#{k}");
            k += 1;
        }
        verses.insert(key.clone(), text.to_string());
        key
    }

    /// Sorted language codes.
    pub fn languages(&self) -> Vec<String> {
        self.texts.keys().cloned().collect()
    }

    pub fn num_languages(&self) -> usize {
        self.texts.len()
    }

    pub fn contains_language(&self, lang: &str) -> bool {
        self.texts.contains_key(lang)
    }

    pub fn verses(&self, lang: &str) -> Option<&BTreeMap<String, String>> {
        self.texts.get(lang)
    }

    pub fn text(&self, lang: &str, verse: &str) -> Option<&str> {
        self.texts.get(lang)?.get(verse).map(String::as_str)
    }

    /// Source files that contributed to each language.
    pub fn sources(&self, lang: &str) -> &[String] {
        self.sources.get(lang).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All `(language, verse-id, text)` triples in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.texts
            .iter()
            .flat_map(|(l, vs)| vs.iter().map(move |(v, t)| (l.as_str(), v.as_str(), t.as_str())))
    }

    pub fn num_chars(&self) -> usize {
        self.iter().map(|(_, _, t)| t.chars().count()).sum()
    }

    /// Sub-corpus restricted to the given languages.
    pub fn restrict(&self, langs: &[String]) -> Result<VerseCorpus> {
        let mut out = VerseCorpus::new();
        for l in langs {
            let verses = self.texts.get(l).ok_or_else(|| Error::UnknownLanguage {
                code: l.clone(),
                known: self.languages(),
            })?;
            out.texts.insert(l.clone(), verses.clone());
            if let Some(s) = self.sources.get(l) {
                out.sources.insert(l.clone(), s.clone());
            }
        }
        Ok(out)
    }
}

/// Loads every `<lang>[-<translation>].txt` file of `dir`.
///
/// Lines are `verse-id<TAB>text`; blank lines are skipped. Files of the same
/// language are read base file first, then translations in name order, and
/// concatenated; repeated verse-ids get `#2`, `#3`, … suffixes.
pub fn load_corpus(dir: &Path) -> Result<VerseCorpus> {
    let mut files: Vec<(String, Option<String>, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let (lang, translation) = match stem.split_once('-') {
            Some((l, t)) => (l.to_string(), Some(t.to_string())),
            None => (stem.to_string(), None),
        };
        if lang.is_empty() {
            return Err(Error::Config(format!("file {} has no language code", path.display())));
        }
        files.push((lang, translation, path));
    }
    if files.is_empty() {
        return Err(Error::Config(format!("no corpus files (*.txt) in {}", dir.display())));
    }
    files.sort();

    let mut corpus = VerseCorpus::new();
    for (lang, _, path) in &files {
        let content = fs::read_to_string(path)?;
        for (n, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (verse, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                file: path.clone(),
                line: n + 1,
                message: "expected `verse-id<TAB>text`".into(),
            })?;
            if verse.is_empty() {
                return Err(Error::Parse {
                    file: path.clone(),
                    line: n + 1,
                    message: "empty verse-id".into(),
                });
            }
            corpus.insert(lang, verse, text);
        }
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        corpus.sources.entry(lang.clone()).or_default().push(name);
    }
    for (lang, _, path) in &files {
        if corpus.verses(lang).is_none_or(BTreeMap::is_empty) {
            return Err(Error::Config(format!(
                "language `{lang}` has no verses (from {})",
                path.display()
            )));
        }
    }
    Ok(corpus)
}

/// Held-out verse-ids (shared by all languages) and per-language training verses.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    held_out: Vec<String>,
    train: BTreeMap<String, Vec<String>>,
}

impl SplitSpec {
    /// Held-out ids, most widely translated first.
    pub fn held_out(&self) -> &[String] {
        &self.held_out
    }

    pub fn is_held_out(&self, verse: &str) -> bool {
        let base = duplicate_base(verse).unwrap_or(verse);
        self.held_out.iter().any(|h| h == base)
    }

    pub fn train(&self, lang: &str) -> &[String] {
        self.train.get(lang).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Held-out verses present in `lang`, in held-out order.
    pub fn held_out_for<'a>(&'a self, corpus: &'a VerseCorpus, lang: &str) -> Vec<&'a str> {
        let Some(verses) = corpus.verses(lang) else {
            return Vec::new();
        };
        self.held_out
            .iter()
            .filter_map(|h| verses.get(h).map(String::as_str))
            .collect()
    }
}

/// Holds out the `holdout` verse-ids present in the most languages (ties by id).
///
/// Held-out ids are removed from training in every language, including their
/// `#k` duplicates from additional translations.
pub fn split_train_test(corpus: &VerseCorpus, holdout: usize) -> Result<SplitSpec> {
    if holdout == 0 {
        return Err(Error::Config("held-out size must be at least 1".into()));
    }
    let mut coverage: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, verse, _) in corpus.iter() {
        if duplicate_base(verse).is_none() {
            *coverage.entry(verse).or_insert(0) += 1;
        }
    }
    if holdout >= coverage.len() {
        return Err(Error::Config(format!(
            "held-out size {holdout} leaves no training verses ({} distinct verse-ids)",
            coverage.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = coverage.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let held: BTreeSet<&str> = ranked[..holdout].iter().map(|(v, _)| *v).collect();
    let held_out: Vec<String> = ranked[..holdout].iter().map(|(v, _)| v.to_string()).collect();

    let mut train = BTreeMap::new();
    for lang in corpus.languages() {
        let ids: Vec<String> = corpus
            .verses(&lang)
            .unwrap()
            .keys()
            .filter(|v| !held.contains(duplicate_base(v).unwrap_or(v)))
            .cloned()
            .collect();
        train.insert(lang, ids);
    }
    Ok(SplitSpec { held_out, train })
}

/// Encoded sequence `BOS, …, EOS` tagged with its language id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub language: usize,
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(language: usize, ids: Vec<usize>) -> Result<Self> {
        let seq = TokenSequence { language, ids };
        seq.validate(usize::MAX)?;
        Ok(seq)
    }

    /// Checks boundaries and that every id is below `vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let ids = &self.ids;
        if ids.len() < 2 || ids[0] != BOS || ids[ids.len() - 1] != EOS {
            return Err(Error::Contract(
                "token sequence must start with BOS, end with EOS and have length ≥ 2".into(),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::Index {
                what: "vocabulary id",
                index: bad,
                size: vocab_size,
            });
        }
        Ok(())
    }

    /// Number of predicted symbols (everything after BOS).
    pub fn num_predictions(&self) -> usize {
        self.ids.len() - 1
    }

    /// Encodes `text`, splitting it into consecutive pieces so no sequence
    /// exceeds `max_len` ids (each piece gets its own BOS/EOS).
    pub fn encode(vocab: &Vocabulary, language: usize, text: &str, max_len: usize) -> Vec<Self> {
        let chars = vocab.encode_chars(text);
        let room = max_len.saturating_sub(2).max(1);
        let wrap = |piece: &[usize]| {
            let mut ids = Vec::with_capacity(piece.len() + 2);
            ids.push(BOS);
            ids.extend_from_slice(piece);
            ids.push(EOS);
            TokenSequence { language, ids }
        };
        if chars.is_empty() {
            return vec![wrap(&[])];
        }
        chars.chunks(room).map(wrap).collect()
    }
}

/// Pre-encoded training verses with language-uniform sampling.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    /// Per language id, the encoded pieces of each training verse.
    per_language: Vec<Vec<Vec<TokenSequence>>>,
}

impl BatchSampler {
    /// Language ids follow `corpus.languages()` order.
    pub fn new(corpus: &VerseCorpus, split: &SplitSpec, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let mut per_language = Vec::new();
        for (id, lang) in corpus.languages().iter().enumerate() {
            let verses = split.train(lang);
            if verses.is_empty() {
                return Err(Error::Config(format!("language `{lang}` has no training verses")));
            }
            per_language.push(
                verses
                    .iter()
                    .map(|v| {
                        let text = corpus.text(lang, v).unwrap_or_default();
                        TokenSequence::encode(vocab, id, text, max_len)
                    })
                    .collect(),
            );
        }
        if per_language.is_empty() {
            return Err(Error::Config("corpus has no languages".into()));
        }
        Ok(BatchSampler { per_language })
    }

    pub fn num_languages(&self) -> usize {
        self.per_language.len()
    }

    /// Draws `batch_size` verses: language uniformly, then one of its training
    /// verses uniformly. Long verses contribute all of their pieces.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Vec<TokenSequence> {
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let lang = rng.random_range(0..self.per_language.len());
            let verses = &self.per_language[lang];
            let v = rng.random_range(0..verses.len());
            out.extend(verses[v].iter().cloned());
        }
        out
    }
}

/// One-shot form of [`BatchSampler::sample`].
pub fn sample_batch<R: Rng + ?Sized>(
    corpus: &VerseCorpus,
    split: &SplitSpec,
    vocab: &Vocabulary,
    rng: &mut R,
    batch_size: usize,
) -> Result<Vec<TokenSequence>> {
    Ok(BatchSampler::new(corpus, split, vocab, DEFAULT_MAX_LEN)?.sample(rng, batch_size))
}
