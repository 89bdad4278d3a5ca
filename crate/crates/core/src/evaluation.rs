//! Held-out cross-entropy and the two capacity experiments (growing the
//! language set, shrinking the hidden state).

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocabulary, split_train_test, SplitSpec, TokenSequence, VerseCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{LanguageVector, Model, ModelConfig};
use crate::tensor::Real;
use crate::training::{train, Checkpoint, TrainConfig};

/// Which forward implementation scores the text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPath {
    /// Eager, one character at a time.
    Stepwise,
    /// All sequences of a language through one tape.
    Batched,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEval {
    pub language: String,
    pub chars: usize,
    pub nats_per_char: f64,
    pub bits_per_char: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<LanguageEval>,
    /// Unweighted mean of the per-language bits/char.
    pub mean_bits_per_char: f64,
}

impl EvalReport {
    pub const HEADER: &'static str = "language,chars,nats_per_char,bits_per_char";

    pub fn row(&self, language: &str) -> Option<&LanguageEval> {
        self.rows.iter().find(|r| r.language == language)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.language, r.chars, r.nats_per_char, r.bits_per_char);
        }
        s
    }
}

/// Total nll (nats) and predicted-symbol count of `texts`, each scored as one
/// `BOS … EOS` sequence from a zero state.
pub fn score_texts<T: Real, S: AsRef<str>>(
    model: &Model<T>,
    vocab: &Vocabulary,
    lang: &LanguageVector<T>,
    texts: &[S],
    path: EvalPath,
) -> Result<(f64, usize)> {
    let seqs: Vec<TokenSequence> = texts
        .iter()
        .flat_map(|t| TokenSequence::encode(vocab, 0, t.as_ref(), usize::MAX))
        .collect();
    let scored = match path {
        EvalPath::Stepwise => seqs
            .iter()
            .map(|s| model.sequence_nll(s, lang))
            .collect::<Result<Vec<_>>>()?,
        EvalPath::Batched => model.batch_nll(&seqs, &vec![lang.clone(); seqs.len()])?,
    };
    // summed in input order so the result does not depend on the path
    Ok(scored.iter().fold((0.0, 0), |(n, c), &(nll, k)| (n + nll, c + k)))
}

/// Bits per character of `texts` under `lang`.
pub fn bits_per_char<T: Real, S: AsRef<str>>(
    model: &Model<T>,
    vocab: &Vocabulary,
    lang: &LanguageVector<T>,
    texts: &[S],
) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Config("no text to score".into()));
    }
    let (nll, chars) = score_texts(model, vocab, lang, texts, EvalPath::Stepwise)?;
    Ok(nll / chars as f64 / LN_2)
}

/// Scores the held-out verses of each requested language.
///
/// `model_languages` maps the model's language ids to codes.
pub fn evaluate_model<T: Real>(
    model: &Model<T>,
    vocab: &Vocabulary,
    model_languages: &[String],
    corpus: &VerseCorpus,
    split: &SplitSpec,
    languages: &[String],
    path: EvalPath,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(languages.len());
    for code in languages {
        let id = model_languages
            .iter()
            .position(|l| l == code)
            .ok_or_else(|| Error::UnknownLanguage {
                code: code.clone(),
                known: model_languages.to_vec(),
            })?;
        let texts = split.held_out_for(corpus, code);
        if texts.is_empty() {
            return Err(Error::Config(format!("language `{code}` has no held-out verses")));
        }
        let lang = model.language_vector(id)?;
        let (nll, chars) = score_texts(model, vocab, &lang, &texts, path)?;
        let nats = nll / chars as f64;
        rows.push(LanguageEval {
            language: code.clone(),
            chars,
            nats_per_char: nats,
            bits_per_char: nats / LN_2,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config("no languages to evaluate".into()));
    }
    let mean_bits_per_char = rows.iter().map(|r| r.bits_per_char).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        rows,
        mean_bits_per_char,
    })
}

/// Held-out cross-entropy of a checkpoint, computed in double precision.
pub fn evaluate(
    ckpt: &Checkpoint,
    corpus: &VerseCorpus,
    split: &SplitSpec,
    languages: &[String],
) -> Result<EvalReport> {
    let model: Model<f64> = ckpt.model.cast();
    evaluate_model(
        &model,
        &ckpt.vocab,
        &ckpt.languages,
        corpus,
        split,
        languages,
        EvalPath::Stepwise,
    )
}

/// Architecture knobs shared by every run of an experiment; the vocabulary
/// size and language count are filled in per run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub char_embed_dim: usize,
    pub hidden_dim: usize,
    pub lang_embed_dim: usize,
    pub pre_softmax_dim: usize,
    pub tie_language_embeddings: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(4, 1);
        ModelShape {
            char_embed_dim: c.char_embed_dim,
            hidden_dim: c.hidden_dim,
            lang_embed_dim: c.lang_embed_dim,
            pre_softmax_dim: c.pre_softmax_dim,
            tie_language_embeddings: c.tie_language_embeddings,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, num_languages: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            char_embed_dim: self.char_embed_dim,
            hidden_dim: self.hidden_dim,
            lang_embed_dim: self.lang_embed_dim,
            num_languages,
            pre_softmax_dim: self.pre_softmax_dim,
            tie_language_embeddings: self.tie_language_embeddings,
        }
    }
}

/// Seed for run `k` of an experiment.
pub fn run_seed(master: u64, k: usize) -> u64 {
    master ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Rows completed before a run failed.
#[derive(Debug)]
pub struct PartialRun<R> {
    pub completed: Vec<R>,
    pub error: Error,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LanguageOrder {
    /// Shuffle of the sorted language codes.
    Random { seed: u64 },
    /// User-supplied order, e.g. most similar languages first.
    Given(Vec<String>),
}

#[derive(Clone, Debug)]
pub struct CapacityPlan {
    pub order: LanguageOrder,
    /// Number of training languages per run, strictly increasing.
    pub schedule: Vec<usize>,
    /// Languages to report; empty means every language in the run.
    pub tracked: Vec<String>,
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub vocab_cap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityRow {
    pub num_languages: usize,
    pub language: String,
    pub heldout_bits_per_char: f64,
}

pub const CAPACITY_HEADER: &str = "num_languages,language,heldout_bits_per_char";

pub fn capacity_csv(rows: &[CapacityRow]) -> String {
    let mut s = format!("{CAPACITY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.num_languages, r.language, r.heldout_bits_per_char);
    }
    s
}

impl CapacityPlan {
    /// Resolves the language order against `corpus`.
    pub fn language_order(&self, corpus: &VerseCorpus) -> Result<Vec<String>> {
        let known = corpus.languages();
        match &self.order {
            LanguageOrder::Random { seed } => {
                let mut order = known;
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                Ok(order)
            }
            LanguageOrder::Given(order) => {
                for (i, code) in order.iter().enumerate() {
                    if !corpus.contains_language(code) {
                        return Err(Error::UnknownLanguage {
                            code: code.clone(),
                            known,
                        });
                    }
                    if order[..i].contains(code) {
                        return Err(Error::Config(format!("language `{code}` listed twice in the order")));
                    }
                }
                Ok(order.clone())
            }
        }
    }

    pub fn validate(&self, corpus: &VerseCorpus) -> Result<Vec<String>> {
        let order = self.language_order(corpus)?;
        if self.schedule.is_empty() || self.schedule[0] == 0 {
            return Err(Error::Config("schedule must start at 1 or more languages".into()));
        }
        if self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "schedule {:?} is not strictly increasing",
                self.schedule
            )));
        }
        let last = *self.schedule.last().unwrap();
        if last > order.len() {
            return Err(Error::Config(format!(
                "schedule needs {last} languages, order has {}",
                order.len()
            )));
        }
        for code in &self.tracked {
            if !order.contains(code) {
                return Err(Error::UnknownLanguage {
                    code: code.clone(),
                    known: order.clone(),
                });
            }
        }
        self.train.validate()?;
        Ok(order)
    }
}

/// Trains one model per schedule entry on the first `k` languages of the
/// order and reports held-out bits/char for the tracked languages present.
pub fn capacity_experiment(
    corpus: &VerseCorpus,
    plan: &CapacityPlan,
) -> std::result::Result<Vec<CapacityRow>, PartialRun<CapacityRow>> {
    let fail = |completed, error| PartialRun { completed, error };
    let order = plan.validate(corpus).map_err(|e| fail(Vec::new(), e))?;
    let vocab = build_vocabulary(corpus, plan.vocab_cap).map_err(|e| fail(Vec::new(), e))?;
    let mut rows = Vec::new();
    for &k in &plan.schedule {
        let present = &order[..k];
        let run = || -> Result<Vec<CapacityRow>> {
            let sub = corpus.restrict(present)?;
            let split = split_train_test(&sub, plan.train.holdout)?;
            let cfg = plan.shape.config(vocab.len(), sub.num_languages());
            let train_cfg = TrainConfig {
                seed: run_seed(plan.train.seed, k),
                ..plan.train.clone()
            };
            let outcome = train(&sub, &split, &vocab, &cfg, &train_cfg)?;
            let report_langs: Vec<String> = present
                .iter()
                .filter(|c| plan.tracked.is_empty() || plan.tracked.contains(c))
                .cloned()
                .collect();
            let report = evaluate(&outcome.checkpoint, &sub, &split, &report_langs)?;
            Ok(report
                .rows
                .into_iter()
                .map(|r| CapacityRow {
                    num_languages: k,
                    language: r.language,
                    heldout_bits_per_char: r.bits_per_char,
                })
                .collect())
        };
        match run() {
            Ok(r) => rows.extend(r),
            Err(e) => return Err(fail(rows, e)),
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ShrinkPlan {
    pub language: String,
    pub base_hidden: usize,
    /// Number of sizes: `base_hidden`, `base_hidden / 2`, …
    pub num_sizes: usize,
    /// `hidden_dim` and `pre_softmax_dim` are overridden per run.
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub vocab_cap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkRow {
    pub hidden_size: usize,
    pub total_params: usize,
    pub lstm_params: usize,
    pub heldout_bits_per_char: f64,
}

pub const SHRINK_HEADER: &str = "hidden_size,total_params,lstm_params,heldout_bits_per_char";

pub fn shrink_csv(rows: &[ShrinkRow]) -> String {
    let mut s = format!("{SHRINK_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.hidden_size, r.total_params, r.lstm_params, r.heldout_bits_per_char
        );
    }
    s
}

impl ShrinkPlan {
    /// Hidden sizes from repeated halving; each must stay at least 1.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        if self.num_sizes == 0 {
            return Err(Error::Config("shrink plan needs at least one size".into()));
        }
        let sizes: Vec<usize> = (0..self.num_sizes)
            .map(|i| self.base_hidden.checked_shr(i as u32).unwrap_or(0))
            .collect();
        if *sizes.last().unwrap() == 0 {
            return Err(Error::Config(format!(
                "halving {} hidden units {} times reaches zero",
                self.base_hidden,
                self.num_sizes - 1
            )));
        }
        Ok(sizes)
    }
}

/// Monolingual training at each hidden size (pre-softmax width follows H).
pub fn shrink_experiment(
    corpus: &VerseCorpus,
    plan: &ShrinkPlan,
) -> std::result::Result<Vec<ShrinkRow>, PartialRun<ShrinkRow>> {
    let fail = |completed, error| PartialRun { completed, error };
    let setup = || -> Result<_> {
        let sizes = plan.sizes()?;
        plan.train.validate()?;
        let sub = corpus.restrict(std::slice::from_ref(&plan.language))?;
        let split = split_train_test(&sub, plan.train.holdout)?;
        let vocab = build_vocabulary(&sub, plan.vocab_cap)?;
        Ok((sizes, sub, split, vocab))
    };
    let (sizes, sub, split, vocab) = setup().map_err(|e| fail(Vec::new(), e))?;
    let mut rows = Vec::new();
    for (k, &h) in sizes.iter().enumerate() {
        let run = || -> Result<ShrinkRow> {
            let cfg = plan.shape.config(vocab.len(), 1).with_hidden(h);
            let train_cfg = TrainConfig {
                seed: run_seed(plan.train.seed, k),
                ..plan.train.clone()
            };
            let outcome = train(&sub, &split, &vocab, &cfg, &train_cfg)?;
            let report = evaluate(&outcome.checkpoint, &sub, &split, std::slice::from_ref(&plan.language))?;
            Ok(ShrinkRow {
                hidden_size: h,
                total_params: cfg.total_param_count(),
                lstm_params: cfg.lstm_param_count(),
                heldout_bits_per_char: report.mean_bits_per_char,
            })
        };
        match run() {
            Ok(r) => rows.push(r),
            Err(e) => return Err(fail(rows, e)),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_train_test;

    fn corpus(langs: &[&str]) -> VerseCorpus {
        let mut c = VerseCorpus::new();
        for (li, l) in langs.iter().enumerate() {
            for v in 0..6 {
                let text: String = (0..8)
                    .map(|i| (b'a' + ((i * (li + 1) + v) % 5) as u8) as char)
                    .collect();
                c.insert(l, &format!("v{v}"), &text);
            }
        }
        c
    }

    fn zero_checkpoint(c: &VerseCorpus) -> Checkpoint {
        let vocab = build_vocabulary(c, 100).unwrap();
        let mut cfg = ModelConfig::new(vocab.len(), c.num_languages()).with_hidden(4);
        cfg.char_embed_dim = 3;
        cfg.lang_embed_dim = 2;
        Checkpoint {
            model: Model::zeros(cfg).unwrap(),
            vocab,
            languages: c.languages(),
            step: 0,
            history: Vec::new(),
            holdout: 2,
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            steps: 2,
            batch_size: 2,
            eval_every: 2,
            holdout: 2,
            ..Default::default()
        }
    }

    fn tiny_shape() -> ModelShape {
        ModelShape {
            char_embed_dim: 3,
            hidden_dim: 4,
            lang_embed_dim: 2,
            pre_softmax_dim: 4,
            tie_language_embeddings: false,
        }
    }

    #[test]
    fn zero_model_scores_log2_v() {
        let c = corpus(&["aaa", "bbb"]);
        let split = split_train_test(&c, 2).unwrap();
        let ckpt = zero_checkpoint(&c);
        let report = evaluate(&ckpt, &c, &split, &c.languages()).unwrap();
        let expected = (ckpt.vocab.len() as f64).log2();
        for r in &report.rows {
            assert!((r.bits_per_char - expected).abs() < 1e-12);
            assert_eq!(r.bits_per_char, r.nats_per_char / LN_2);
            assert_eq!(r.chars, 2 * 9);
        }
    }

    #[test]
    fn unknown_language_is_reported() {
        let c = corpus(&["aaa"]);
        let split = split_train_test(&c, 2).unwrap();
        let err = evaluate(&zero_checkpoint(&c), &c, &split, &["zzz".into()]).unwrap_err();
        assert!(matches!(err, Error::UnknownLanguage { .. }));
        assert!(err.to_string().contains("aaa"));
    }

    #[test]
    fn held_out_order_does_not_matter() {
        let c = corpus(&["aaa"]);
        let ckpt = zero_checkpoint(&c);
        let model: Model<f64> = ckpt.model.cast();
        let lang = model.language_vector(0).unwrap();
        let texts = ["abcab", "cc", "eeaab"];
        let rev = ["eeaab", "cc", "abcab"];
        let a = score_texts(&model, &ckpt.vocab, &lang, &texts, EvalPath::Stepwise).unwrap();
        let b = score_texts(&model, &ckpt.vocab, &lang, &rev, EvalPath::Stepwise).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12 && a.1 == b.1);
    }

    #[test]
    fn capacity_counts_and_order() {
        let c = corpus(&["aaa", "bbb", "ccc", "ddd"]);
        let plan = CapacityPlan {
            order: LanguageOrder::Random { seed: 5 },
            schedule: vec![1, 2, 4],
            tracked: Vec::new(),
            shape: tiny_shape(),
            train: tiny_train(),
            vocab_cap: 100,
        };
        let rows = capacity_experiment(&c, &plan).unwrap();
        assert_eq!(rows.len(), 1 + 2 + 4);
        assert_eq!(plan.language_order(&c).unwrap(), plan.language_order(&c).unwrap());
        let first = &plan.language_order(&c).unwrap()[0];
        assert_eq!(&rows[0].language, first);
        assert!(capacity_csv(&rows).starts_with("num_languages,language,heldout_bits_per_char\n"));

        let single = CapacityPlan {
            schedule: vec![1],
            order: LanguageOrder::Given(vec!["ccc".into(), "aaa".into()]),
            ..plan.clone()
        };
        let rows = capacity_experiment(&c, &single).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].language, "ccc");
    }

    #[test]
    fn capacity_rejects_bad_schedules() {
        let c = corpus(&["aaa", "bbb"]);
        let mut plan = CapacityPlan {
            order: LanguageOrder::Given(vec!["aaa".into(), "bbb".into()]),
            schedule: vec![2, 1],
            tracked: Vec::new(),
            shape: tiny_shape(),
            train: tiny_train(),
            vocab_cap: 100,
        };
        assert!(capacity_experiment(&c, &plan).is_err());
        plan.schedule = vec![1, 3];
        assert!(capacity_experiment(&c, &plan).is_err());
        plan.schedule = vec![1];
        plan.order = LanguageOrder::Given(vec!["xxx".into()]);
        let err = capacity_experiment(&c, &plan).unwrap_err();
        assert!(err.completed.is_empty());
        assert!(matches!(err.error, Error::UnknownLanguage { .. }));
    }

    #[test]
    fn shrink_rows_follow_halving() {
        let c = corpus(&["aaa", "bbb"]);
        let plan = ShrinkPlan {
            language: "bbb".into(),
            base_hidden: 8,
            num_sizes: 2,
            shape: tiny_shape(),
            train: tiny_train(),
            vocab_cap: 100,
        };
        let rows = shrink_experiment(&c, &plan).unwrap();
        assert_eq!(rows.iter().map(|r| r.hidden_size).collect::<Vec<_>>(), [8, 4]);
        assert!(rows[0].lstm_params > rows[1].lstm_params);
        assert!(rows[0].total_params > rows[1].total_params);
        assert!(shrink_csv(&rows).lines().count() == 3);
        let too_many = ShrinkPlan { num_sizes: 5, ..plan };
        assert!(too_many.sizes().is_err());
    }
}
