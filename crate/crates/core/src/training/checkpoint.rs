//! Binary checkpoint format.
//!
//! ```text
//! "MLLM"  u32 version
//! u64 header length, header (UTF-8 `key = value` lines)
//! per parameter: u64 name length, name, u64 rank, rank × u64 dims, f32 values
//! ```
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{LanguageVector, Model, ModelConfig};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: [u8; 4] = *b"MLLM";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to evaluate it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    /// Language codes indexed by language id.
    pub languages: Vec<String>,
    pub step: u64,
    /// `(step, held-out bits/char)` for every evaluation made during training.
    pub history: Vec<(u64, f64)>,
    /// Held-out size used for the training split.
    pub holdout: usize,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn language_id(&self, code: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == code)
            .ok_or_else(|| Error::UnknownLanguage {
                code: code.to_string(),
                known: self.languages.clone(),
            })
    }

    pub fn language_vector(&self, code: &str) -> Result<LanguageVector<f32>> {
        self.model.language_vector(self.language_id(code)?)
    }

    fn header(&self) -> String {
        let mut lines: Vec<(String, String)> = self.model.config().to_pairs();
        let syms: Vec<String> = self
            .vocab
            .symbols()
            .iter()
            .map(|&c| format!("{:x}", c as u32))
            .collect();
        lines.push(("vocab.symbols".into(), syms.join(" ")));
        lines.push(("languages.count".into(), self.languages.len().to_string()));
        for (i, l) in self.languages.iter().enumerate() {
            lines.push((format!("languages.{i}"), l.clone()));
        }
        lines.push(("step".into(), self.step.to_string()));
        lines.push(("holdout".into(), self.holdout.to_string()));
        let hist: Vec<String> = self.history.iter().map(|(s, b)| format!("{s}:{b:?}")).collect();
        lines.push(("history".into(), hist.join(" ")));
        lines.push(("param_count".into(), self.model.params().len().to_string()));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = self.header();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (name, t) in self.model.params().iter() {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = r.u64("header length")?;
        let header = std::str::from_utf8(r.take_len(hlen, "header")?)
            .map_err(|_| Error::Malformed("header is not UTF-8".into()))?;
        let kv = parse_header(header)?;
        let get = |k: &str| kv.get(k).cloned();
        let need = |k: &str| get(k).ok_or_else(|| Error::Malformed(format!("missing `{k}`")));
        let int = |k: &str| -> Result<u64> {
            need(k)?
                .parse()
                .map_err(|_| Error::Malformed(format!("bad integer for `{k}`")))
        };

        let config = ModelConfig::from_lookup(get)?;
        let symbols = need("vocab.symbols")?
            .split_whitespace()
            .map(|h| {
                u32::from_str_radix(h, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Malformed(format!("bad vocabulary symbol `{h}`")))
            })
            .collect::<Result<Vec<char>>>()?;
        let vocab = Vocabulary::from_symbols(symbols).map_err(|e| Error::Malformed(e.to_string()))?;
        let nlang = int("languages.count")? as usize;
        let languages = (0..nlang)
            .map(|i| need(&format!("languages.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let history = need("history")?
            .split_whitespace()
            .map(|item| {
                let (s, b) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Malformed(format!("bad history entry `{item}`")))?;
                let s = s
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad history step `{s}`")))?;
                let b = b
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad history value `{b}`")))?;
                Ok((s, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = int("param_count")? as usize;

        let mut params = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u64("parameter name length")?;
            let name = std::str::from_utf8(r.take_len(nlen, "parameter name")?)
                .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u64("parameter rank")?;
            if rank == 0 || rank > 8 {
                return Err(Error::Malformed(format!("parameter `{name}` has rank {rank}")));
            }
            let mut shape = Vec::new();
            for _ in 0..rank {
                shape.push(r.u64("parameter dims")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Malformed(format!("parameter `{name}` is too large")))?;
            let raw = r.take_len((n as u64).saturating_mul(4), "parameter values")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Malformed(e.to_string()))?;
            params.add(&name, t).map_err(|e| Error::Malformed(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        if vocab.len() != config.vocab_size || languages.len() != config.num_languages {
            return Err(Error::Malformed(
                "vocabulary or language table disagrees with the model config".into(),
            ));
        }
        let model = Model::from_params(config, params).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(Checkpoint {
            model,
            vocab,
            languages,
            step: int("step")?,
            history,
            holdout: int("holdout")? as usize,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn parse_header(text: &str) -> Result<HashMap<String, String>> {
    let mut kv = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(" = ")
            .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
            .ok_or_else(|| Error::Malformed(format!("bad header line `{line}`")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    Ok(kv)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn take_len(&mut self, n: u64, what: &'static str) -> Result<&'a [u8]> {
        let n = usize::try_from(n).map_err(|_| Error::Truncated(what))?;
        self.take(n, what)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::from_symbols(vec!['a', 'b', ' ', 'é']).unwrap();
        let mut cfg = ModelConfig::new(vocab.len(), 2).with_hidden(4);
        cfg.char_embed_dim = 3;
        cfg.lang_embed_dim = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Checkpoint {
            model: Model::init(cfg, &mut rng).unwrap(),
            vocab,
            languages: vec!["deu".into(), "eng".into()],
            step: 42,
            history: vec![(0, 2.807354922057604), (10, 1.25)],
            holdout: 128,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.languages, c.languages);
        assert_eq!(back.history, c.history);
        assert_eq!(back.step, 42);
        assert_eq!(back.config(), c.config());
        for ((n1, t1), (n2, t2)) in back.model.params().iter().zip(c.model.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn every_truncation_is_a_typed_error() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Version { found: 7, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'));
    }

    #[test]
    fn unknown_language_lists_known_codes() {
        let err = sample().language_id("fra").unwrap_err();
        assert!(err.to_string().contains("deu, eng"));
    }
}
