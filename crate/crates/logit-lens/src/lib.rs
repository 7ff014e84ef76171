pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod probe_curves;
pub mod report;
pub mod sweep;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tokenizer::Tokenizer;
