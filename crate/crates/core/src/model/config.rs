use crate::error::{Error, Result};

/// Shapes of the two-layer language-conditioned LSTM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub char_embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of one language-vector segment.
    pub lang_embed_dim: usize,
    pub num_languages: usize,
    /// Width of the tanh layer before the output projection.
    pub pre_softmax_dim: usize,
    /// One shared segment instead of three separate ones.
    pub tie_language_embeddings: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: E = 32, H = 64, L = 8, D = H, untied.
    pub fn new(vocab_size: usize, num_languages: usize) -> Self {
        ModelConfig {
            vocab_size,
            char_embed_dim: 32,
            hidden_dim: 64,
            lang_embed_dim: 8,
            num_languages,
            pre_softmax_dim: 64,
            tie_language_embeddings: false,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_dim = hidden;
        self.pre_softmax_dim = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("char_embed_dim", self.char_embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("lang_embed_dim", self.lang_embed_dim),
            ("num_languages", self.num_languages),
            ("pre_softmax_dim", self.pre_softmax_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Number of distinct language-vector segments (1 when tied, else 3).
    pub fn num_segments(&self) -> usize {
        if self.tie_language_embeddings {
            1
        } else {
            3
        }
    }

    /// Length of a full language vector.
    pub fn lang_vector_dim(&self) -> usize {
        self.num_segments() * self.lang_embed_dim
    }

    fn lstm_layer_params(&self, input: usize) -> usize {
        let h = self.hidden_dim;
        // w_x, w_h, gate bias, input/recurrent norm gains, cell norm gain + bias
        4 * h * input + 4 * h * h + 4 * h + 2 * 4 * h + 2 * h
    }

    /// Parameters of both LSTM layers, layer-norm parameters included.
    pub fn lstm_param_count(&self) -> usize {
        let l = self.lang_embed_dim;
        self.lstm_layer_params(self.char_embed_dim + l) + self.lstm_layer_params(self.hidden_dim + l)
    }

    pub fn total_param_count(&self) -> usize {
        let (v, l, h, d) = (
            self.vocab_size,
            self.lang_embed_dim,
            self.hidden_dim,
            self.pre_softmax_dim,
        );
        v * self.char_embed_dim
            + self.num_segments() * self.num_languages * l
            + self.lstm_param_count()
            + d * (h + l)
            + d
            + v * d
            + v
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("model.vocab_size".into(), self.vocab_size.to_string()),
            ("model.char_embed_dim".into(), self.char_embed_dim.to_string()),
            ("model.hidden_dim".into(), self.hidden_dim.to_string()),
            ("model.lang_embed_dim".into(), self.lang_embed_dim.to_string()),
            ("model.num_languages".into(), self.num_languages.to_string()),
            ("model.pre_softmax_dim".into(), self.pre_softmax_dim.to_string()),
            (
                "model.tie_language_embeddings".into(),
                self.tie_language_embeddings.to_string(),
            ),
        ]
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            get(k)
                .ok_or_else(|| Error::Malformed(format!("missing `{k}`")))?
                .parse()
                .map_err(|_| Error::Malformed(format!("bad integer for `{k}`")))
        };
        let tie = get("model.tie_language_embeddings")
            .ok_or_else(|| Error::Malformed("missing `model.tie_language_embeddings`".into()))?
            .parse()
            .map_err(|_| Error::Malformed("bad boolean for `model.tie_language_embeddings`".into()))?;
        let cfg = ModelConfig {
            vocab_size: num("model.vocab_size")?,
            char_embed_dim: num("model.char_embed_dim")?,
            hidden_dim: num("model.hidden_dim")?,
            lang_embed_dim: num("model.lang_embed_dim")?,
            num_languages: num("model.num_languages")?,
            pre_softmax_dim: num("model.pre_softmax_dim")?,
            tie_language_embeddings: tie,
        };
        cfg.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(cfg)
    }
}
