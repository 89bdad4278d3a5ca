use std::collections::{BTreeMap, HashMap};

use super::VerseCorpus;
use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const NUM_RESERVED: usize = 3;

pub const DEFAULT_VOCAB_CAP: usize = 1000;

/// Character vocabulary: three reserved ids followed by symbols in
/// descending corpus frequency (ties by ascending code point).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds from an explicit symbol list in id order (ids start after the reserved ones).
    pub fn from_symbols(symbols: Vec<char>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if ids.insert(c, i + NUM_RESERVED).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        Ok(Vocabulary { symbols, ids })
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.symbols.len() + NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    /// `None` for the reserved ids.
    pub fn symbol(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_RESERVED).and_then(|i| self.symbols.get(i).copied())
    }

    /// Character ids only, without BOS/EOS.
    pub fn encode_chars(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// `BOS, chars…, EOS`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(text.len() + 2);
        ids.push(BOS);
        ids.extend(text.chars().map(|c| self.id(c)));
        ids.push(EOS);
        ids
    }

    /// Drops BOS/EOS; UNK becomes U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                BOS | EOS => None,
                UNK => Some(char::REPLACEMENT_CHARACTER),
                _ => Some(self.symbol(id).unwrap_or(char::REPLACEMENT_CHARACTER)),
            })
            .collect()
    }
}

/// Keeps the `cap − 3` most frequent scalars of the corpus.
pub fn build_vocabulary(corpus: &VerseCorpus, cap: usize) -> Result<Vocabulary> {
    if cap < NUM_RESERVED + 1 {
        return Err(Error::Config(format!("vocabulary cap must be at least 4, got {cap}")));
    }
    let mut counts: BTreeMap<char, u64> = BTreeMap::new();
    for (_, _, text) in corpus.iter() {
        for c in text.chars() {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cap - NUM_RESERVED);
    Vocabulary::from_symbols(ranked.into_iter().map(|(c, _)| c).collect())
}
