//! The language-conditioned character model.
//!
//! A character embedding concatenated with the first language segment feeds
//! LSTM-1; its output concatenated with the second segment feeds LSTM-2; the
//! top hidden state concatenated with the third segment goes through a tanh
//! layer and the output projection to give next-character logits.

mod config;
mod lstm;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::tensor::{kernels, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub use config::ModelConfig;
pub use lstm::{lstm_cell, lstm_cell_tape, LayerState, LstmVars, LstmWeights};

/// Standard deviation of the Gaussian used for embedding initialization.
pub const EMBED_INIT_STD: f64 = 0.1;
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Per-language conditioning vector: three segments (LSTM-1 input, LSTM-2
/// input, pre-softmax layer), or a single shared one when tied.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageVector<T> {
    segments: Vec<Vec<T>>,
}

impl<T: Real> LanguageVector<T> {
    pub fn new(segments: Vec<Vec<T>>) -> Result<Self> {
        if segments.len() != 1 && segments.len() != 3 {
            return Err(Error::Contract(format!(
                "language vector needs 1 or 3 segments, got {}",
                segments.len()
            )));
        }
        let d = segments[0].len();
        if d == 0 || segments.iter().any(|s| s.len() != d) {
            return Err(Error::Contract(
                "language vector segments must share a positive width".into(),
            ));
        }
        Ok(LanguageVector { segments })
    }

    /// Splits a full vector into `segments` equal parts.
    pub fn from_full(full: &[T], segments: usize) -> Result<Self> {
        if segments == 0 || full.len() % segments != 0 {
            return Err(Error::shape("language vector", &[full.len()], &[segments]));
        }
        let d = full.len() / segments;
        Self::new(full.chunks(d).map(<[T]>::to_vec).collect())
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        LanguageVector {
            segments: vec![vec![T::zero(); config.lang_embed_dim]; config.num_segments()],
        }
    }

    pub fn is_tied(&self) -> bool {
        self.segments.len() == 1
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_dim(&self) -> usize {
        self.segments[0].len()
    }

    /// Vector injected at point `k` (0: LSTM-1, 1: LSTM-2, 2: pre-softmax).
    pub fn segment(&self, k: usize) -> &[T] {
        if self.is_tied() {
            &self.segments[0]
        } else {
            &self.segments[k]
        }
    }

    pub fn segments(&self) -> &[Vec<T>] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.segments
    }

    /// Concatenation of the distinct segments.
    pub fn full(&self) -> Vec<T> {
        self.segments.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> LanguageVector<U> {
        LanguageVector {
            segments: self
                .segments
                .iter()
                .map(|s| s.iter().map(|v| U::of(v.f64())).collect())
                .collect(),
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.segments.len() != config.num_segments() || self.segment_dim() != config.lang_embed_dim {
            return Err(Error::shape(
                "language vector",
                &[self.segments.len(), self.segment_dim()],
                &[config.num_segments(), config.lang_embed_dim],
            ));
        }
        Ok(())
    }
}

/// Recurrent state of both layers.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<T> {
    pub layers: [LayerState<T>; 2],
}

impl<T: Real> RecurrentState<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        RecurrentState {
            layers: [
                LayerState::zeros(config.hidden_dim),
                LayerState::zeros(config.hidden_dim),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    ln_x_gain: ParamId,
    ln_h_gain: ParamId,
    ln_c_gain: ParamId,
    ln_c_bias: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    char_embed: ParamId,
    lang: Vec<ParamId>,
    lstm: [LstmIds; 2],
    pre_w: ParamId,
    pre_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Parameter names and shapes in registration (and checkpoint) order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, h, l, n, d) = (
        config.vocab_size,
        config.char_embed_dim,
        config.hidden_dim,
        config.lang_embed_dim,
        config.num_languages,
        config.pre_softmax_dim,
    );
    let mut out = vec![("char_embed".to_string(), vec![v, e])];
    if config.tie_language_embeddings {
        out.push(("lang_embed".into(), vec![n, l]));
    } else {
        for k in 1..=3 {
            out.push((format!("lang_embed.{k}"), vec![n, l]));
        }
    }
    for (layer, input) in [(1, e + l), (2, h + l)] {
        let p = format!("lstm{layer}");
        out.push((format!("{p}.w_x"), vec![4 * h, input]));
        out.push((format!("{p}.w_h"), vec![4 * h, h]));
        out.push((format!("{p}.b"), vec![4 * h]));
        out.push((format!("{p}.ln_x.gain"), vec![4 * h]));
        out.push((format!("{p}.ln_h.gain"), vec![4 * h]));
        out.push((format!("{p}.ln_c.gain"), vec![h]));
        out.push((format!("{p}.ln_c.bias"), vec![h]));
    }
    out.push(("pre.w".into(), vec![d, h + l]));
    out.push(("pre.b".into(), vec![d]));
    out.push(("out.w".into(), vec![v, d]));
    out.push(("out.b".into(), vec![v]));
    out
}

/// Model parameters plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ParamIds,
}

/// How [`Model::bind`] records parameters on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Gradients flow into the model's parameter store.
    Trainable,
    /// Parameters enter as constants; no gradient is computed for them.
    Frozen,
}

/// Tape handles for all model parameters.
#[derive(Clone, Debug)]
pub struct BoundModel {
    char_embed: Var,
    lang: Vec<Var>,
    lstm: [LstmVars; 2],
    pre_w: Var,
    pre_b: Var,
    out_w: Var,
    out_b: Var,
}

/// Language segments recorded on a tape, one per injection point.
#[derive(Clone, Copy, Debug)]
pub struct LangVars(pub [Var; 3]);

impl<T: Real> Model<T> {
    /// All parameters zero, which makes every prediction uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in param_layout(&config) {
            params.add(&name, Tensor::zeros(&shape))?;
        }
        Self::from_params(config, params)
    }

    /// Glorot-uniform matrices, zero biases (forget gate +1), unit norm gains,
    /// Gaussian embeddings.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        for (name, shape) in param_layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.starts_with("char_embed") || name.starts_with("lang_embed") {
                (0..n).map(|_| T::of(normal.sample(rng))).collect()
            } else if name.ends_with(".gain") {
                vec![T::one(); n]
            } else if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
                (0..n).map(|_| T::of(dist.sample(rng))).collect()
            } else {
                let mut b = vec![T::zero(); n];
                if name.ends_with(".b") && name.starts_with("lstm") {
                    let h = config.hidden_dim;
                    b[h..2 * h].iter_mut().for_each(|v| *v = T::of(FORGET_BIAS_INIT));
                }
                b
            };
            params.add(&name, Tensor::new(shape, data)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing store, checking names and shapes against the configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).unwrap();
        let lstm = |layer: usize| LstmIds {
            w_x: id(&format!("lstm{layer}.w_x")),
            w_h: id(&format!("lstm{layer}.w_h")),
            b: id(&format!("lstm{layer}.b")),
            ln_x_gain: id(&format!("lstm{layer}.ln_x.gain")),
            ln_h_gain: id(&format!("lstm{layer}.ln_h.gain")),
            ln_c_gain: id(&format!("lstm{layer}.ln_c.gain")),
            ln_c_bias: id(&format!("lstm{layer}.ln_c.bias")),
        };
        let ids = ParamIds {
            char_embed: id("char_embed"),
            lang: if config.tie_language_embeddings {
                vec![id("lang_embed")]
            } else {
                (1..=3).map(|k| id(&format!("lang_embed.{k}"))).collect()
            },
            lstm: [lstm(1), lstm(2)],
            pre_w: id("pre.w"),
            pre_b: id("pre.b"),
            out_w: id("out.w"),
            out_b: id("out.b"),
        };
        Ok(Model { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// The learned vector of language `lang`.
    pub fn language_vector(&self, lang: usize) -> Result<LanguageVector<T>> {
        if lang >= self.config.num_languages {
            return Err(Error::Index {
                what: "language",
                index: lang,
                size: self.config.num_languages,
            });
        }
        LanguageVector::new(
            self.ids
                .lang
                .iter()
                .map(|&id| self.params.value(id).row(lang).to_vec())
                .collect(),
        )
    }

    /// Overwrites the stored vector of language `lang`.
    pub fn set_language_vector(&mut self, lang: usize, v: &LanguageVector<T>) -> Result<()> {
        v.check(&self.config)?;
        if lang >= self.config.num_languages {
            return Err(Error::Index {
                what: "language",
                index: lang,
                size: self.config.num_languages,
            });
        }
        for (k, &id) in self.ids.lang.clone().iter().enumerate() {
            self.params
                .value_mut(id)
                .row_mut(lang)
                .copy_from_slice(&v.segments()[k]);
        }
        Ok(())
    }

    fn weights(&self, layer: usize) -> LstmWeights<'_, T> {
        let ids = &self.ids.lstm[layer];
        let p = |id: ParamId| self.params.value(id).data();
        LstmWeights {
            hidden: self.config.hidden_dim,
            input: self.params.value(ids.w_x).shape()[1],
            w_x: p(ids.w_x),
            w_h: p(ids.w_h),
            b: p(ids.b),
            ln_x_gain: p(ids.ln_x_gain),
            ln_h_gain: p(ids.ln_h_gain),
            ln_c_gain: p(ids.ln_c_gain),
            ln_c_bias: p(ids.ln_c_bias),
        }
    }

    /// One eager step: consumes `char_id`, returns next-character logits.
    pub fn forward_step(
        &self,
        state: &RecurrentState<T>,
        char_id: usize,
        lang: &LanguageVector<T>,
    ) -> Result<(Vec<T>, RecurrentState<T>)> {
        let cfg = &self.config;
        lang.check(cfg)?;
        if char_id >= cfg.vocab_size {
            return Err(Error::Index {
                what: "character",
                index: char_id,
                size: cfg.vocab_size,
            });
        }
        let embed = self.params.value(self.ids.char_embed).row(char_id);
        let x1 = [embed, lang.segment(0)].concat();
        let s1 = lstm_cell(&x1, &state.layers[0], &self.weights(0))?;
        let x2 = [s1.h.as_slice(), lang.segment(1)].concat();
        let s2 = lstm_cell(&x2, &state.layers[1], &self.weights(1))?;
        let z = [s2.h.as_slice(), lang.segment(2)].concat();

        let (d, h, l, v) = (cfg.pre_softmax_dim, cfg.hidden_dim, cfg.lang_embed_dim, cfg.vocab_size);
        let pre = kernels::matvec(self.params.value(self.ids.pre_w).data(), d, h + l, &z);
        let hid: Vec<T> = pre
            .iter()
            .zip(self.params.value(self.ids.pre_b).data())
            .map(|(&p, &b)| (p + b).tanh())
            .collect();
        let out = kernels::matvec(self.params.value(self.ids.out_w).data(), v, d, &hid);
        let logits = out
            .iter()
            .zip(self.params.value(self.ids.out_b).data())
            .map(|(&o, &b)| o + b)
            .collect();
        Ok((logits, RecurrentState { layers: [s1, s2] }))
    }

    /// Teacher-forced negative log-likelihood (nats) of `seq` and the number
    /// of predicted symbols. The state starts at zero and BOS is never predicted.
    pub fn sequence_nll(&self, seq: &TokenSequence, lang: &LanguageVector<T>) -> Result<(f64, usize)> {
        seq.validate(self.config.vocab_size)?;
        let mut state = RecurrentState::zeros(&self.config);
        let mut total = 0.0f64;
        for w in seq.ids.windows(2) {
            let (logits, next) = self.forward_step(&state, w[0], lang)?;
            total += kernels::softmax_xent(&logits, w[1]).0.f64();
            state = next;
        }
        Ok((total, seq.num_predictions()))
    }

    /// Records all parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, binding: Binding) -> BoundModel {
        let mut rec = |id: ParamId| match binding {
            Binding::Trainable => tape.param(&self.params, id),
            Binding::Frozen => tape.constant(self.params.value(id).clone()),
        };
        let lstm_vars = |ids: &LstmIds, rec: &mut dyn FnMut(ParamId) -> Var| LstmVars {
            hidden: self.config.hidden_dim,
            w_x: rec(ids.w_x),
            w_h: rec(ids.w_h),
            b: rec(ids.b),
            ln_x_gain: rec(ids.ln_x_gain),
            ln_h_gain: rec(ids.ln_h_gain),
            ln_c_gain: rec(ids.ln_c_gain),
            ln_c_bias: rec(ids.ln_c_bias),
        };
        let char_embed = rec(self.ids.char_embed);
        let lang = self.ids.lang.iter().map(|&id| rec(id)).collect();
        let l1 = lstm_vars(&self.ids.lstm[0], &mut rec);
        let l2 = lstm_vars(&self.ids.lstm[1], &mut rec);
        BoundModel {
            char_embed,
            lang,
            lstm: [l1, l2],
            pre_w: rec(self.ids.pre_w),
            pre_b: rec(self.ids.pre_b),
            out_w: rec(self.ids.out_w),
            out_b: rec(self.ids.out_b),
        }
    }

    /// Per-position losses (nats) of `seq` recorded on `tape`.
    pub fn sequence_losses_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        seq: &TokenSequence,
        lang: LangVars,
    ) -> Result<Vec<Var>> {
        seq.validate(self.config.vocab_size)?;
        let h = self.config.hidden_dim;
        let zero = tape.constant(Tensor::zeros(&[h]));
        let mut states = [(zero, zero), (zero, zero)];
        let mut losses = Vec::with_capacity(seq.num_predictions());
        for w in seq.ids.windows(2) {
            let e = tape.lookup(bound.char_embed, w[0])?;
            let x1 = tape.concat(&[e, lang.0[0]])?;
            let (h1, c1) = lstm_cell_tape(tape, x1, states[0].0, states[0].1, &bound.lstm[0])?;
            let x2 = tape.concat(&[h1, lang.0[1]])?;
            let (h2, c2) = lstm_cell_tape(tape, x2, states[1].0, states[1].1, &bound.lstm[1])?;
            let z = tape.concat(&[h2, lang.0[2]])?;
            let p = tape.matmul(bound.pre_w, z)?;
            let p = tape.add(p, bound.pre_b)?;
            let hid = tape.tanh(p);
            let o = tape.matmul(bound.out_w, hid)?;
            let logits = tape.add(o, bound.out_b)?;
            losses.push(tape.softmax_xent(logits, w[1])?);
            states = [(h1, c1), (h2, c2)];
        }
        Ok(losses)
    }

    /// Batched teacher-forced scoring through a single tape; agrees with
    /// [`Model::sequence_nll`] sequence by sequence.
    pub fn batch_nll(&self, seqs: &[TokenSequence], langs: &[LanguageVector<T>]) -> Result<Vec<(f64, usize)>> {
        if seqs.len() != langs.len() {
            return Err(Error::shape("batch_nll", &[seqs.len()], &[langs.len()]));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Binding::Frozen);
        let mut out = Vec::with_capacity(seqs.len());
        for (seq, lang) in seqs.iter().zip(langs) {
            lang.check(&self.config)?;
            let vars = constant_language(&mut tape, lang);
            let losses = self.sequence_losses_tape(&mut tape, &bound, seq, vars)?;
            let total: f64 = losses.iter().map(|&v| tape.value(v).item().f64()).sum();
            out.push((total, seq.num_predictions()));
        }
        Ok(out)
    }
}

impl BoundModel {
    /// Looks up language `lang` in the bound embedding tables.
    pub fn language<T: Real>(&self, tape: &mut Tape<T>, lang: usize) -> Result<LangVars> {
        let mut segs = Vec::with_capacity(3);
        for &table in &self.lang {
            segs.push(tape.lookup(table, lang)?);
        }
        Ok(expand(&segs))
    }
}

fn expand(segs: &[Var]) -> LangVars {
    if segs.len() == 1 {
        LangVars([segs[0]; 3])
    } else {
        LangVars([segs[0], segs[1], segs[2]])
    }
}

/// Records a fixed language vector.
pub fn constant_language<T: Real>(tape: &mut Tape<T>, lang: &LanguageVector<T>) -> LangVars {
    let segs: Vec<Var> = lang
        .segments()
        .iter()
        .map(|s| tape.constant(Tensor::vector(s.clone())))
        .collect();
    expand(&segs)
}

/// Records a language vector whose segments are parameters of `store`.
pub fn param_language<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, ids: &[ParamId]) -> LangVars {
    let segs: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
    expand(&segs)
}
