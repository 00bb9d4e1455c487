//! Evaluation metrics, dataset preparation (dedup, rule-assisted cleaning,
//! splitting, k-fold assignment) and hyperparameter search.

mod dataset;
mod metrics;
mod search;
mod split;

pub use dataset::{
    clean_webshell_candidates, dedup, list_files, read_manifest, write_manifest, CleanOutcome,
    DedupOutcome, Duplicate, ManifestRow,
};
pub use metrics::{auc, metrics, ConfusionMatrix, MetricReport};
pub use search::{
    grid_search, random_search, FailedTrial, ParamDef, ParamSpec, SearchOutcome, SearchSpace, Trial,
};
pub use split::{
    fold_train_indices, split_dataset, stratified_folds, DatasetItem, Split, DEFAULT_TRAIN_RATIO,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("io: {0}")]
    Io(String),
}
