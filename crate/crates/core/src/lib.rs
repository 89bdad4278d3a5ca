//! Character-level LSTM language model conditioned on continuous language vectors.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod langspace;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
