//! Tabular DNN over flow features: categorical embeddings for destination
//! port and protocol, z-scored continuous features, two Linear/ReLU/BatchNorm
//! blocks and a two-way output.

mod classifier;
mod cv;
mod dnn;
mod schema;

pub use classifier::{load_flow_classifier, FlowClassifier, StubClassifier};
pub use cv::{kfold_cv, kfold_cv_inputs, FoldResult, KFoldReport};
pub use dnn::{
    build_dnn, dnn_predict, train_dnn, train_dnn_inputs, Prediction, TabularConfig, TrafficModel,
    DEFAULT_HIDDEN,
};
pub use schema::{embedding_dim, CategoryVocab, FeatureSchema, Normalizer};

#[derive(Debug, thiserror::Error)]
pub enum TrafficError {
    #[error("config: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Net(#[from] crate::tensornet::NetError),
    #[error(transparent)]
    Eval(#[from] crate::evalkit::EvalError),
}
