//! Opcode CNN for source files and the rule-first hybrid detector.

mod cnn;
mod hybrid;

pub use cnn::{build_cnn, cnn_predict, cnn_predict_batch, train_cnn, CnnConfig, SourceModel};
pub use hybrid::{
    hybrid_detect, Label, OpcodeClassifier, ScanRecord, Verdict, VerdictSource, THRESHOLD,
};

#[derive(Debug, thiserror::Error)]
pub enum SrcError {
    #[error("config: {0}")]
    Config(String),
    #[error("opcode vector has length {got}, model expects {expected}")]
    Length { expected: usize, got: usize },
    #[error("no opcodes found in the disassembly")]
    NoOpcodes,
    #[error(transparent)]
    Net(#[from] crate::tensornet::NetError),
    #[error(transparent)]
    Opcode(#[from] crate::opcode::OpcodeError),
}
