//! Opcode listings (VLD for PHP, ildasm for CIL) and their vectorization
//! into fixed-length index sequences.

mod corpus;
mod disasm;
mod oiva;
mod vocab;

use std::path::PathBuf;

pub use corpus::{read_corpus_csv, vectorize_corpus, write_corpus_csv, VectorizedCorpus};
pub use disasm::{parse_cil, parse_vld, OpcodeListing};
pub use oiva::{oiva, OciVector, DEFAULT_MAX_LENGTH};
pub use vocab::{Language, OpcodeVocabulary};

#[derive(Debug, thiserror::Error)]
pub enum OpcodeError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate mnemonic `{0}` in vocabulary")]
    DuplicateMnemonic(String),
    #[error("invalid mnemonic `{0}`")]
    BadMnemonic(String),
    #[error("unknown language `{0}` (expected php or cil)")]
    Language(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

/// Parses `text` with the listing parser for `language`.
pub fn parse_listing(language: Language, text: &str) -> OpcodeListing {
    match language {
        Language::Php => parse_vld(text),
        Language::Cil => parse_cil(text),
    }
}
