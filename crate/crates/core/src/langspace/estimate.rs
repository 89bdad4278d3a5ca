use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::evaluation::bits_per_char;
use crate::model::{param_language, Binding, LanguageVector, Model};
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::training::{adam_step, AdamState, Checkpoint};

/// Where the optimization starts.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimationInit {
    Language(String),
    Vector(LanguageVector<f32>),
    /// The training language that scores the optimization sentences best.
    Nearest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub init: EstimationInit,
    /// Fraction of the sentences used for optimization; the rest are held out.
    pub optimize_fraction: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            steps: 200,
            learning_rate: 0.1,
            init: EstimationInit::Nearest,
            optimize_fraction: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    /// Vector with the best internal held-out score seen.
    pub vector: LanguageVector<f32>,
    /// Code of the initial language, if the start was a language.
    pub init_language: Option<String>,
    pub before_bits_per_char: f64,
    pub after_bits_per_char: f64,
    /// Step at which `vector` was reached (0 = the initial vector).
    pub best_step: usize,
    pub optimize_sentences: usize,
    pub heldout_sentences: usize,
}

/// Language id whose vector gives `texts` the lowest bits/char, with that score.
pub fn nearest_language<S: AsRef<str>>(ckpt: &Checkpoint, texts: &[S]) -> Result<(usize, f64)> {
    let model: Model<f64> = ckpt.model.cast();
    let mut best = (0, f64::INFINITY);
    for id in 0..ckpt.languages.len() {
        let bits = bits_per_char(&model, &ckpt.vocab, &model.language_vector(id)?, texts)?;
        if bits < best.1 {
            best = (id, bits);
        }
    }
    Ok(best)
}

/// Fits a language vector to `sentences` with every model parameter frozen.
///
/// The first `optimize_fraction` of the sentences drive full-batch Adam on
/// the vector; the remainder score each iterate. The learning rate halves
/// whenever that score does not improve, and the best iterate is returned,
/// so the reported held-out score never gets worse than the starting one.
pub fn estimate_vector<S: AsRef<str>>(ckpt: &Checkpoint, sentences: &[S], cfg: &EstimationConfig) -> Result<Estimate> {
    let n = sentences.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "vector estimation needs at least 2 sentences, got {n}"
        )));
    }
    if sentences.iter().any(|s| s.as_ref().is_empty()) {
        return Err(Error::Config("empty sentence in estimation data".into()));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::Config(format!("invalid learning rate {}", cfg.learning_rate)));
    }
    if !(cfg.optimize_fraction > 0.0 && cfg.optimize_fraction < 1.0) {
        return Err(Error::Config(format!(
            "optimize fraction {} outside (0, 1)",
            cfg.optimize_fraction
        )));
    }
    let n_opt = ((n as f64 * cfg.optimize_fraction).round() as usize).clamp(1, n - 1);
    let (opt_texts, held) = sentences.split_at(n_opt);

    let (init, init_language) = match &cfg.init {
        EstimationInit::Language(code) => (ckpt.language_vector(code)?, Some(code.clone())),
        EstimationInit::Vector(v) => {
            v.check(ckpt.config())?;
            if !v.is_finite() {
                return Err(Error::NonFinite("initial language vector".into()));
            }
            (v.clone(), None)
        }
        EstimationInit::Nearest => {
            let (id, _) = nearest_language(ckpt, opt_texts)?;
            (ckpt.model.language_vector(id)?, Some(ckpt.languages[id].clone()))
        }
    };

    let model: Model<f64> = ckpt.model.cast();
    let vocab = &ckpt.vocab;
    let seqs: Vec<TokenSequence> = opt_texts
        .iter()
        .flat_map(|t| TokenSequence::encode(vocab, 0, t.as_ref(), usize::MAX))
        .collect();
    let chars: usize = seqs.iter().map(TokenSequence::num_predictions).sum();

    let mut store = ParamStore::<f64>::new();
    let ids = init
        .cast::<f64>()
        .segments()
        .iter()
        .enumerate()
        .map(|(k, s)| store.add(&format!("lang.{k}"), Tensor::vector(s.clone())))
        .collect::<Result<Vec<_>>>()?;
    let current =
        |store: &ParamStore<f64>| LanguageVector::new(ids.iter().map(|&id| store.value(id).data().to_vec()).collect());

    let before = bits_per_char(&model, vocab, &init.cast(), held)?;
    let mut best = (init.clone(), before, 0);
    let mut opt = AdamState::new(&store, cfg.learning_rate);
    for step in 1..=cfg.steps {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, Binding::Frozen);
        let lang = param_language(&mut tape, &store, &ids);
        let mut losses = Vec::new();
        for seq in &seqs {
            losses.extend(model.sequence_losses_tape(&mut tape, &bound, seq, lang)?);
        }
        let total = tape.add_n(&losses)?;
        let loss = tape.scale(total, 1.0 / chars as f64);
        tape.backward(loss, &mut store)?;
        adam_step(&mut store, &mut opt)?;

        let v = current(&store)?;
        let bits = bits_per_char(&model, vocab, &v, held)?;
        if bits < best.1 {
            best = (v.cast(), bits, step);
        } else {
            opt.lr *= 0.5;
        }
    }
    Ok(Estimate {
        vector: best.0,
        init_language,
        before_bits_per_char: before,
        after_bits_per_char: best.1,
        best_step: best.2,
        optimize_sentences: n_opt,
        heldout_sentences: n - n_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ckpt() -> Checkpoint {
        let vocab = Vocabulary::from_symbols(vec!['a', 'b', 'c']).unwrap();
        let mut cfg = ModelConfig::new(vocab.len(), 2).with_hidden(4);
        cfg.char_embed_dim = 2;
        cfg.lang_embed_dim = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        Checkpoint {
            model: Model::init(cfg, &mut rng).unwrap(),
            vocab,
            languages: vec!["aaa".into(), "bbb".into()],
            step: 0,
            history: Vec::new(),
            holdout: 1,
        }
    }

    const SENTS: [&str; 4] = ["abca", "bbca", "aabc", "cab"];

    #[test]
    fn zero_steps_returns_init() {
        let c = ckpt();
        let cfg = EstimationConfig {
            steps: 0,
            init: EstimationInit::Language("bbb".into()),
            ..Default::default()
        };
        let e = estimate_vector(&c, &SENTS, &cfg).unwrap();
        assert_eq!(e.vector, c.language_vector("bbb").unwrap());
        assert_eq!(e.before_bits_per_char, e.after_bits_per_char);
        assert_eq!((e.optimize_sentences, e.heldout_sentences), (3, 1));
    }

    #[test]
    fn never_worse_and_model_untouched() {
        let c = ckpt();
        let bytes = c.to_bytes();
        let cfg = EstimationConfig {
            steps: 10,
            init: EstimationInit::Nearest,
            ..Default::default()
        };
        let e = estimate_vector(&c, &SENTS, &cfg).unwrap();
        assert!(e.after_bits_per_char <= e.before_bits_per_char);
        assert_eq!(c.to_bytes(), bytes);
        assert!(e.init_language.is_some());
    }

    #[test]
    fn rejects_bad_input() {
        let c = ckpt();
        let cfg = EstimationConfig::default();
        assert!(estimate_vector(&c, &["abc"], &cfg).is_err());
        assert!(estimate_vector(&c, &["abc", ""], &cfg).is_err());
        let unknown = EstimationConfig {
            init: EstimationInit::Language("zzz".into()),
            ..Default::default()
        };
        assert!(matches!(
            estimate_vector(&c, &SENTS, &unknown),
            Err(Error::UnknownLanguage { .. })
        ));
    }
}
