//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::ModelShape;
use crate::training::{InitMode, Precision, TrainConfig};

/// Every accepted key with its default (if any).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("corpus", None),
    ("out", None),
    ("seed", None),
    ("char_embed_dim", Some("32")),
    ("hidden_dim", Some("64")),
    ("lang_embed_dim", Some("8")),
    ("pre_softmax_dim", None),
    ("tie_language_embeddings", Some("false")),
    ("vocab_cap", Some("1000")),
    ("steps", Some("1000")),
    ("batch_size", Some("16")),
    ("eval_every", Some("100")),
    ("patience", Some("0")),
    ("clip_norm", Some("5")),
    ("learning_rate", Some("0.001")),
    ("max_len", Some("512")),
    ("holdout", Some("128")),
    ("precision", Some("f32")),
    ("init", Some("random")),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RunConfig {
    pub fn parse(text: &str, file: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                file: file.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !known(k) {
                return Err(err(format!("unknown key `{k}`")));
            }
            if cfg.values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("key `{k}` given twice")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Command-line override.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn set_pairs(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{p}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn model_shape(&self) -> Result<ModelShape> {
        let hidden: usize = self.require("hidden_dim")?;
        Ok(ModelShape {
            char_embed_dim: self.require("char_embed_dim")?,
            hidden_dim: hidden,
            lang_embed_dim: self.require("lang_embed_dim")?,
            pre_softmax_dim: self.get("pre_softmax_dim")?.unwrap_or(hidden),
            tie_language_embeddings: self.require("tie_language_embeddings")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let precision = match self.require::<String>("precision")?.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            p => return Err(Error::Config(format!("precision must be f32 or f64, got `{p}`"))),
        };
        let init = match self.require::<String>("init")?.as_str() {
            "random" => InitMode::Random,
            "zeros" => InitMode::Zeros,
            i => return Err(Error::Config(format!("init must be random or zeros, got `{i}`"))),
        };
        let cfg = TrainConfig {
            steps: self.require("steps")?,
            batch_size: self.require("batch_size")?,
            eval_every: self.require("eval_every")?,
            patience: self.require("patience")?,
            seed: self.require("seed")?,
            clip_norm: self.require("clip_norm")?,
            learning_rate: self.require("learning_rate")?,
            max_len: self.require("max_len")?,
            precision,
            init,
            holdout: self.require("holdout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its effective value; keys without a value or default are omitted.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            if let Some(v) = self.raw(k) {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}
