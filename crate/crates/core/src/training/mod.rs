//! Adam training with language-uniform batches, periodic held-out evaluation,
//! best-checkpoint retention and early stopping.

mod adam;
mod checkpoint;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BatchSampler, SplitSpec, VerseCorpus, Vocabulary, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, EvalPath};
use crate::model::{Binding, Model, ModelConfig};
use crate::tensor::{Real, Tape};

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2, DEFAULT_LEARNING_RATE};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Random,
    /// All parameters zero (uniform predictions).
    Zeros,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub learning_rate: f64,
    pub max_len: usize,
    pub precision: Precision,
    pub init: InitMode,
    /// Held-out size recorded in the checkpoint.
    pub holdout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            eval_every: 100,
            patience: 0,
            seed: 0,
            clip_norm: DEFAULT_CLIP_NORM,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_len: DEFAULT_MAX_LEN,
            precision: Precision::F32,
            init: InitMode::Random,
            holdout: crate::corpus::DEFAULT_HOLDOUT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "steps, batch_size and eval_every must be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("invalid clip norm {}", self.clip_norm)));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }
}

/// One evaluation point of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    /// Mean batch loss since the previous evaluation (NaN at step 0).
    pub train_nats_per_char: f64,
    pub heldout_bits_per_char: f64,
}

/// Append-only evaluation log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "step,train_nats_per_char,heldout_bits_per_char";

    pub fn push(&mut self, r: MetricRecord) {
        self.records.push(r);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.step, r.train_nats_per_char, r.heldout_bits_per_char);
        }
        s
    }
}

/// Patience counter over a metric where lower is better.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad_evals: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NoImprovement,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, metric: f64) -> Observation {
        if metric < self.best {
            self.best = metric;
            self.bad_evals = 0;
            return Observation::Improved;
        }
        self.bad_evals += 1;
        if self.patience > 0 && self.bad_evals >= self.patience {
            Observation::Stop
        } else {
            Observation::NoImprovement
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the evaluation with the lowest held-out cross-entropy.
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
    pub stop: StopReason,
    /// Last step executed.
    pub final_step: u64,
}

/// Trains a fresh model on `corpus`; language ids follow `corpus.languages()`.
///
/// `model_config.vocab_size` and `num_languages` must match `vocab` and the corpus.
pub fn train(
    corpus: &VerseCorpus,
    split: &SplitSpec,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    match config.precision {
        Precision::F32 => train_typed::<f32>(corpus, split, vocab, model_config, config),
        Precision::F64 => train_typed::<f64>(corpus, split, vocab, model_config, config),
    }
}

fn snapshot<T: Real>(
    model: &Model<T>,
    vocab: &Vocabulary,
    languages: &[String],
    step: u64,
    history: &[(u64, f64)],
    holdout: usize,
) -> Checkpoint {
    Checkpoint {
        model: model.cast(),
        vocab: vocab.clone(),
        languages: languages.to_vec(),
        step,
        history: history.to_vec(),
        holdout,
    }
}

/// Mean per-character loss of a batch recorded on a fresh tape; gradients are
/// accumulated into the model's store.
pub fn batch_loss_and_grad<T: Real>(model: &mut Model<T>, batch: &[crate::corpus::TokenSequence]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, Binding::Trainable);
    let mut losses = Vec::new();
    for seq in batch {
        let lang = bound.language(&mut tape, seq.language)?;
        losses.extend(model.sequence_losses_tape(&mut tape, &bound, seq, lang)?);
    }
    let chars = losses.len();
    let total = tape.add_n(&losses)?;
    let loss = tape.scale(total, T::of(1.0 / chars as f64));
    let value = tape.value(loss).item().f64();
    if value.is_finite() {
        tape.backward(loss, model.params_mut())?;
    }
    Ok(value)
}

pub fn train_typed<T: Real>(
    corpus: &VerseCorpus,
    split: &SplitSpec,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    let languages = corpus.languages();
    if model_config.vocab_size != vocab.len() || model_config.num_languages != languages.len() {
        return Err(Error::Config(format!(
            "model expects V={} N={}, data has V={} N={}",
            model_config.vocab_size,
            model_config.num_languages,
            vocab.len(),
            languages.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model: Model<T> = match config.init {
        InitMode::Random => Model::init(model_config.clone(), &mut rng)?,
        InitMode::Zeros => Model::zeros(model_config.clone())?,
    };
    let sampler = BatchSampler::new(corpus, split, vocab, config.max_len)?;
    let mut opt = AdamState::new(model.params(), config.learning_rate);
    // scored in f64 from the f32 snapshot so the history matches `evaluate`
    // on the saved checkpoint bit for bit
    let eval = |m: &Model<T>| -> Result<f64> {
        let m: Model<f64> = m.cast::<f32>().cast();
        Ok(evaluate_model(&m, vocab, &languages, corpus, split, &languages, EvalPath::Stepwise)?.mean_bits_per_char)
    };

    let mut log = MetricsLog::default();
    let mut history = Vec::new();
    let mut stopper = EarlyStopper::new(config.patience);
    let h0 = eval(&model)?;
    stopper.observe(h0);
    history.push((0, h0));
    log.push(MetricRecord {
        step: 0,
        train_nats_per_char: f64::NAN,
        heldout_bits_per_char: h0,
    });
    let mut best = snapshot(&model, vocab, &languages, 0, &history, config.holdout);

    let (mut window_loss, mut window_steps) = (0.0, 0u64);
    let mut stop = StopReason::Completed;
    let mut step = 0;
    while step < config.steps {
        step += 1;
        let batch = sampler.sample(&mut rng, config.batch_size);
        let loss = batch_loss_and_grad(&mut model, &batch)?;
        if !loss.is_finite() {
            best.history = history.clone();
            return Err(Error::Diverged {
                step,
                last_good: Box::new(best),
            });
        }
        if config.clip_norm > 0.0 {
            model.params_mut().clip_grad_norm(config.clip_norm);
        }
        match adam_step(model.params_mut(), &mut opt) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                best.history = history.clone();
                return Err(Error::Diverged {
                    step,
                    last_good: Box::new(best),
                });
            }
            Err(e) => return Err(e),
        }
        window_loss += loss;
        window_steps += 1;

        if step % config.eval_every == 0 || step == config.steps {
            let h = eval(&model)?;
            history.push((step, h));
            log.push(MetricRecord {
                step,
                train_nats_per_char: window_loss / window_steps as f64,
                heldout_bits_per_char: h,
            });
            window_loss = 0.0;
            window_steps = 0;
            match stopper.observe(h) {
                Observation::Improved => {
                    best = snapshot(&model, vocab, &languages, step, &history, config.holdout);
                }
                Observation::NoImprovement => {}
                Observation::Stop => {
                    stop = StopReason::EarlyStopped;
                    break;
                }
            }
        }
    }
    best.history = history;
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        stop,
        final_step: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, split_train_test};

    fn toy() -> (VerseCorpus, SplitSpec, Vocabulary) {
        let mut c = VerseCorpus::new();
        for (i, t) in ["abab", "baba", "aabb", "abba", "bbaa"].iter().enumerate() {
            c.insert("xx", &format!("v{i}"), t);
            c.insert("yy", &format!("v{i}"), &t.replace('a', "c"));
        }
        let split = split_train_test(&c, 1).unwrap();
        let vocab = build_vocabulary(&c, 100).unwrap();
        (c, split, vocab)
    }

    fn small(vocab: &Vocabulary) -> ModelConfig {
        let mut m = ModelConfig::new(vocab.len(), 2).with_hidden(4);
        m.char_embed_dim = 3;
        m.lang_embed_dim = 2;
        m
    }

    #[test]
    fn stopper_counts_bad_evals() {
        let mut s = EarlyStopper::new(2);
        assert_eq!(s.observe(3.0), Observation::Improved);
        assert_eq!(s.observe(3.0), Observation::NoImprovement);
        assert_eq!(s.observe(2.0), Observation::Improved);
        assert_eq!(s.observe(2.5), Observation::NoImprovement);
        assert_eq!(s.observe(2.5), Observation::Stop);
        let mut off = EarlyStopper::new(0);
        off.observe(1.0);
        for _ in 0..10 {
            assert_eq!(off.observe(5.0), Observation::NoImprovement);
        }
    }

    #[test]
    fn zero_init_starts_at_log2_v() {
        let (c, split, vocab) = toy();
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 2,
            init: InitMode::Zeros,
            ..Default::default()
        };
        let out = train(&c, &split, &vocab, &small(&vocab), &cfg).unwrap();
        let h0 = out.log.records[0].heldout_bits_per_char;
        assert!((h0 - (vocab.len() as f64).log2()).abs() < 1e-12);
        assert!(out.log.records[0].train_nats_per_char.is_nan());
    }

    #[test]
    fn patience_one_without_improvement_stops_at_second_eval() {
        let (c, split, vocab) = toy();
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 2,
            eval_every: 5,
            patience: 1,
            learning_rate: 0.0,
            ..Default::default()
        };
        let out = train(&c, &split, &vocab, &small(&vocab), &cfg).unwrap();
        assert_eq!(out.stop, StopReason::EarlyStopped);
        assert_eq!(out.log.records.len(), 2);
        assert_eq!(out.final_step, 5);
        assert_eq!(out.checkpoint.step, 0);
    }

    #[test]
    fn training_is_reproducible() {
        let (c, split, vocab) = toy();
        let cfg = TrainConfig {
            steps: 6,
            batch_size: 3,
            eval_every: 3,
            seed: 17,
            ..Default::default()
        };
        let a = train(&c, &split, &vocab, &small(&vocab), &cfg).unwrap();
        let b = train(&c, &split, &vocab, &small(&vocab), &cfg).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.log.to_csv(), b.log.to_csv());
    }

    #[test]
    fn best_checkpoint_is_never_worse_than_any_eval() {
        let (c, split, vocab) = toy();
        let cfg = TrainConfig {
            steps: 40,
            batch_size: 4,
            eval_every: 5,
            learning_rate: 0.05,
            seed: 3,
            ..Default::default()
        };
        let out = train(&c, &split, &vocab, &small(&vocab), &cfg).unwrap();
        let best = out
            .checkpoint
            .history
            .iter()
            .find(|(s, _)| *s == out.checkpoint.step)
            .unwrap()
            .1;
        assert!(out.log.records.iter().all(|r| best <= r.heldout_bits_per_char));
    }

    #[test]
    fn mismatched_model_config_is_rejected() {
        let (c, split, vocab) = toy();
        let mut m = small(&vocab);
        m.num_languages = 5;
        assert!(matches!(
            train(&c, &split, &vocab, &m, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_csv_header() {
        let mut log = MetricsLog::default();
        log.push(MetricRecord {
            step: 5,
            train_nats_per_char: 1.5,
            heldout_bits_per_char: 2.25,
        });
        assert_eq!(
            log.to_csv(),
            "step,train_nats_per_char,heldout_bits_per_char\n5,1.5,2.25\n"
        );
    }
}
