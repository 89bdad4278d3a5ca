//! Synthetic language families with a known phylogeny.
//!
//! Each language is a character-bigram generator. The root draws random
//! transition logits; every tree edge adds Gaussian noise to its parent's
//! logits, so languages sharing a recent ancestor have similar statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::VerseCorpus;
use crate::error::{Error, Result};
use crate::langspace::DendrogramTree;
use crate::tensor::kernels::softmax;

/// Anything that yields a next-character distribution given the previous one.
pub trait TextSource {
    fn alphabet(&self) -> &[char];
    /// Distribution over the alphabet; `prev` is `None` at the start.
    fn transition(&self, prev: Option<usize>) -> Vec<f64>;
}

/// Bigram generator. Row 0 of `logits` is the start state, row `1 + i`
/// follows character `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramLanguage {
    pub alphabet: Vec<char>,
    pub logits: Vec<Vec<f64>>,
}

impl BigramLanguage {
    pub fn random<R: Rng + ?Sized>(alphabet: Vec<char>, scale: f64, rng: &mut R) -> Result<Self> {
        let a = alphabet.len();
        if a < 2 {
            return Err(Error::Config("alphabet needs at least 2 characters".into()));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
        let logits = (0..=a).map(|_| (0..a).map(|_| normal.sample(rng)).collect()).collect();
        Ok(BigramLanguage { alphabet, logits })
    }

    /// Child language: every logit perturbed by `N(0, sigma²)`.
    pub fn mutate<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let logits = self
            .logits
            .iter()
            .map(|row| row.iter().map(|&l| l + normal.sample(rng)).collect())
            .collect();
        Ok(BigramLanguage {
            alphabet: self.alphabet.clone(),
            logits,
        })
    }

    /// Child language with `count` random transitions raised by `boost` in logit space.
    pub fn boost_transitions<R: Rng + ?Sized>(&self, count: usize, boost: f64, rng: &mut R) -> Self {
        let mut child = self.clone();
        let (rows, cols) = (self.logits.len(), self.alphabet.len());
        for k in rand::seq::index::sample(rng, rows * cols, count.min(rows * cols)).iter() {
            child.logits[k / cols][k % cols] += boost;
        }
        child
    }

    /// Logit-space blend `(1 − w)·self + w·other`.
    pub fn blend(&self, other: &Self, w: f64) -> Self {
        let logits = self
            .logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
            .collect();
        BigramLanguage {
            alphabet: self.alphabet.clone(),
            logits,
        }
    }

    /// Per-character entropy rate (bits) under the stationary use of rows,
    /// approximated by the average row entropy.
    pub fn mean_row_entropy_bits(&self) -> f64 {
        let rows = &self.logits[1..];
        rows.iter()
            .map(|r| {
                softmax(r)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.log2())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / rows.len() as f64
    }
}

impl TextSource for BigramLanguage {
    fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    fn transition(&self, prev: Option<usize>) -> Vec<f64> {
        softmax(&self.logits[prev.map_or(0, |p| p + 1)])
    }
}

/// Character-level probability mixture of two generators.
#[derive(Clone, Debug)]
pub struct Mixture<'a> {
    pub a: &'a BigramLanguage,
    pub b: &'a BigramLanguage,
    /// Weight of `b`.
    pub weight: f64,
}

impl TextSource for Mixture<'_> {
    fn alphabet(&self) -> &[char] {
        &self.a.alphabet
    }

    fn transition(&self, prev: Option<usize>) -> Vec<f64> {
        let (pa, pb) = (self.a.transition(prev), self.b.transition(prev));
        pa.iter()
            .zip(&pb)
            .map(|(x, y)| (1.0 - self.weight) * x + self.weight * y)
            .collect()
    }
}

/// One text of length drawn uniformly from `lengths`.
pub fn sample_text<S: TextSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    rng: &mut R,
    lengths: std::ops::RangeInclusive<usize>,
) -> String {
    let len = rng.random_range(lengths);
    let mut prev = None;
    let mut out = String::with_capacity(len);
    for _ in 0..len {
        let p = source.transition(prev);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.len() - 1;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                pick = i;
                break;
            }
        }
        out.push(source.alphabet()[pick]);
        prev = Some(pick);
    }
    out
}

pub fn sample_texts<S: TextSource + ?Sized>(
    source: &S,
    count: usize,
    lengths: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_text(source, &mut rng, lengths.clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConfig {
    pub alphabet_size: usize,
    /// Standard deviation of the root logits.
    pub root_scale: f64,
    /// Mutation standard deviation per tree level, root edges first; the
    /// tree has `edge_sigmas.len()` levels and `2^levels` leaves.
    pub edge_sigmas: Vec<f64>,
    pub boosts_per_edge: Vec<usize>,
    pub boost: f64,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            alphabet_size: 12,
            root_scale: 2.0,
            edge_sigmas: vec![1.2, 0.9, 0.6],
            boosts_per_edge: Vec::new(),
            boost: 3.0,
            seed: 0,
        }
    }
}

/// Leaves of a binary phylogeny, named `l` + their root-to-leaf path (`l010`).
#[derive(Clone, Debug)]
pub struct SyntheticFamily {
    pub languages: Vec<(String, BigramLanguage)>,
    /// True topology with merge heights equal to the level of the common ancestor.
    pub tree: DendrogramTree,
}

impl SyntheticFamily {
    pub fn generate(cfg: &FamilyConfig) -> Result<Self> {
        if cfg.edge_sigmas.is_empty() || cfg.edge_sigmas.len() > 10 {
            return Err(Error::Config("family depth must be between 1 and 10".into()));
        }
        if cfg.alphabet_size < 2 || cfg.alphabet_size > 26 {
            return Err(Error::Config("alphabet size must be between 2 and 26".into()));
        }
        let alphabet: Vec<char> = (b'a'..).take(cfg.alphabet_size).map(char::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let root = BigramLanguage::random(alphabet, cfg.root_scale, &mut rng)?;
        let mut level = vec![(String::new(), root)];
        for (depth, &sigma) in cfg.edge_sigmas.iter().enumerate() {
            let mut next = Vec::with_capacity(level.len() * 2);
            for (path, lang) in &level {
                for bit in ['0', '1'] {
                    let child = lang.mutate(sigma, &mut rng)?;
                    let boosts = cfg.boosts_per_edge.get(depth).copied().unwrap_or(0);
                    let child = child.boost_transitions(boosts, cfg.boost, &mut rng);
                    next.push((format!("{path}{bit}"), child));
                }
            }
            level = next;
        }
        let languages: Vec<(String, BigramLanguage)> = level.into_iter().map(|(p, l)| (format!("l{p}"), l)).collect();
        let depth = cfg.edge_sigmas.len();
        let mut nodes: Vec<DendrogramTree> = languages.iter().map(|(c, _)| DendrogramTree::leaf(c)).collect();
        for h in 1..=depth {
            nodes = nodes
                .chunks(2)
                .map(|p| DendrogramTree::join(p[0].clone(), p[1].clone(), h as f64))
                .collect();
        }
        Ok(SyntheticFamily {
            languages,
            tree: nodes.pop().unwrap(),
        })
    }

    pub fn codes(&self) -> Vec<String> {
        self.languages.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn language(&self, code: &str) -> Option<&BigramLanguage> {
        self.languages.iter().find(|(c, _)| c == code).map(|(_, l)| l)
    }

    /// Parallel corpus: verse `v0000 … ` in every language, independently sampled.
    pub fn corpus(&self, verses: usize, lengths: std::ops::RangeInclusive<usize>, seed: u64) -> VerseCorpus {
        let mut c = VerseCorpus::new();
        for (k, (code, lang)) in self.languages.iter().enumerate() {
            let texts = sample_texts(lang, verses, lengths.clone(), seed ^ ((k as u64 + 1) << 32));
            for (v, t) in texts.iter().enumerate() {
                c.insert(code, &format!("v{v:04}"), t);
            }
        }
        c
    }
}
