use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {op} cannot combine shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index error: {what} index {index} out of range (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown language `{code}` (known: {})", known.join(", "))]
    UnknownLanguage { code: String, known: Vec<String> },

    #[error("not a checkpoint file (bad magic {found:?})")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged {
        step: u64,
        /// Best checkpoint seen before the divergence.
        last_good: Box<crate::training::Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
