use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::SrcError;
use crate::opcode::{Language, OciVector, OpcodeVocabulary, DEFAULT_MAX_LENGTH};
use crate::tensornet::{
    checkpoint, fit, AdamConfig, EpochStats, FitOptions, LayerSpec, ModelGraph, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub vocab_size: usize,
    pub max_length: usize,
    pub embedding_dim: usize,
    pub kernel_sizes: [usize; 3],
    pub num_filters: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl CnnConfig {
    /// Tuned PHP settings.
    pub fn php(vocab_size: usize) -> Self {
        CnnConfig {
            vocab_size,
            max_length: DEFAULT_MAX_LENGTH,
            embedding_dim: 8,
            kernel_sizes: [3, 4, 5],
            num_filters: 128,
            dropout_rate: 0.5,
            learning_rate: 0.001,
            batch_size: 96,
            epochs: 64,
            seed: 0,
        }
    }

    /// Tuned ASP.NET (CIL) settings.
    pub fn aspnet(vocab_size: usize) -> Self {
        CnnConfig {
            kernel_sizes: [4, 5, 6],
            batch_size: 64,
            epochs: 32,
            ..Self::php(vocab_size)
        }
    }

    pub fn for_language(language: Language, vocab_size: usize) -> Self {
        match language {
            Language::Php => Self::php(vocab_size),
            Language::Cil => Self::aspnet(vocab_size),
        }
    }

    pub fn validate(&self) -> Result<(), SrcError> {
        let bad = |m: String| Err(SrcError::Config(m));
        let [a, b, c] = self.kernel_sizes;
        if a == 0 || b != a + 1 || c != a + 2 {
            return bad(format!(
                "kernel sizes {:?} must be [x, x+1, x+2] with x >= 1",
                self.kernel_sizes
            ));
        }
        if c > self.max_length {
            return bad(format!(
                "kernel {c} longer than max_length {}",
                self.max_length
            ));
        }
        if self.vocab_size == 0 || self.embedding_dim == 0 || self.num_filters == 0 {
            return bad("vocab_size, embedding_dim and num_filters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive".into());
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig::with_lr(self.learning_rate),
            weights: None,
        }
    }
}

/// Embedding, three parallel Conv1d + ReLU + global-max-pool branches,
/// concatenation, dropout and a two-way dense output (logits).
pub fn build_cnn(config: &CnnConfig) -> Result<ModelGraph, SrcError> {
    config.validate()?;
    let branch = |k: usize| {
        vec![
            LayerSpec::Conv1d {
                in_channels: config.embedding_dim,
                out_channels: config.num_filters,
                kernel: k,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
        ]
    };
    let specs = vec![
        LayerSpec::Embedding {
            num_embeddings: config.vocab_size + 1,
            dim: config.embedding_dim,
            padding_index: Some(0),
        },
        LayerSpec::Concat {
            branches: config.kernel_sizes.iter().map(|&k| branch(k)).collect(),
        },
        LayerSpec::Dropout {
            rate: config.dropout_rate,
        },
        LayerSpec::Dense {
            inputs: 3 * config.num_filters,
            outputs: 2,
        },
    ];
    Ok(ModelGraph::build(
        specs,
        vec![config.max_length],
        config.seed,
    )?)
}

fn to_tensor(rows: &[OciVector], max_length: usize) -> Result<Tensor, SrcError> {
    let mut data = Vec::with_capacity(rows.len() * max_length);
    for r in rows {
        if r.len() != max_length {
            return Err(SrcError::Length {
                expected: max_length,
                got: r.len(),
            });
        }
        data.extend(r.indices.iter().map(|&i| i as f64));
    }
    Ok(Tensor::new(vec![rows.len(), max_length], data)?)
}

/// Trained opcode CNN together with what it was trained on.
#[derive(Debug)]
pub struct SourceModel {
    pub graph: ModelGraph,
    pub config: CnnConfig,
    pub language: Language,
    pub vocab_hash: String,
}

/// Builds and fits the CNN on `rows`/`labels` with unweighted cross-entropy.
pub fn train_cnn(
    rows: &[OciVector],
    labels: &[usize],
    config: &CnnConfig,
) -> Result<(ModelGraph, Vec<EpochStats>), SrcError> {
    let mut graph = build_cnn(config)?;
    let x = to_tensor(rows, config.max_length)?;
    let history = fit(&mut graph, &x, labels, &config.fit_options())?;
    Ok((graph, history))
}

/// `(p_benign, p_webshell)` for one vector, eval mode.
pub fn cnn_predict(model: &ModelGraph, oci: &OciVector) -> Result<(f64, f64), SrcError> {
    Ok(cnn_predict_batch(model, std::slice::from_ref(oci))?[0])
}

pub fn cnn_predict_batch(
    model: &ModelGraph,
    rows: &[OciVector],
) -> Result<Vec<(f64, f64)>, SrcError> {
    let max_length = model.input_shape()[0];
    let p = model.predict_proba(&to_tensor(rows, max_length)?)?;
    Ok((0..p.rows()).map(|i| (p.row(i)[0], p.row(i)[1])).collect())
}

impl SourceModel {
    pub fn train(
        rows: &[OciVector],
        labels: &[usize],
        config: &CnnConfig,
        language: Language,
        vocab: &OpcodeVocabulary,
    ) -> Result<(Self, Vec<EpochStats>), SrcError> {
        if vocab.len() != config.vocab_size {
            return Err(SrcError::Config(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let (graph, history) = train_cnn(rows, labels, config)?;
        let model = SourceModel {
            graph,
            config: config.clone(),
            language,
            vocab_hash: vocab.hash(),
        };
        Ok((model, history))
    }

    pub fn max_length(&self) -> usize {
        self.config.max_length
    }

    /// Errors unless `vocab` is the one the model was trained with.
    pub fn check_vocabulary(&self, vocab: &OpcodeVocabulary) -> Result<(), SrcError> {
        if vocab.hash() != self.vocab_hash {
            return Err(SrcError::Config(
                "vocabulary differs from the one the model was trained with".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SrcError> {
        let meta = json!({
            "kind": "srcmodel",
            "language": self.language,
            "vocab_hash": self.vocab_hash,
            "config": self.config,
        });
        Ok(checkpoint::save(path, &self.graph, &meta)?)
    }

    pub fn load(path: &Path) -> Result<Self, SrcError> {
        let (graph, meta) = checkpoint::load(path)?;
        if meta["kind"] != "srcmodel" {
            return Err(SrcError::Config(format!(
                "{} is not a source-code model checkpoint",
                path.display()
            )));
        }
        let parse =
            |key: &str| SrcError::Config(format!("checkpoint metadata lacks a valid `{key}`"));
        let config: CnnConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|_| parse("config"))?;
        let language: Language =
            serde_json::from_value(meta["language"].clone()).map_err(|_| parse("language"))?;
        let vocab_hash = meta["vocab_hash"]
            .as_str()
            .ok_or_else(|| parse("vocab_hash"))?
            .to_string();
        Ok(SourceModel {
            graph,
            config,
            language,
            vocab_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CnnConfig {
        CnnConfig {
            vocab_size: 6,
            max_length: 10,
            embedding_dim: 4,
            kernel_sizes: [1, 2, 3],
            num_filters: 1,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 2,
            seed: 5,
        }
    }

    #[test]
    fn php_defaults_shape() {
        let g = build_cnn(&CnnConfig {
            max_length: 50,
            ..CnnConfig::php(20)
        })
        .unwrap();
        match &g.specs()[3] {
            LayerSpec::Dense { inputs, outputs } => assert_eq!((*inputs, *outputs), (384, 2)),
            other => panic!("{other:?}"),
        }
        assert_eq!(CnnConfig::aspnet(3).kernel_sizes, [4, 5, 6]);
    }

    #[test]
    fn tiny_concat_width() {
        let g = build_cnn(&tiny()).unwrap();
        match &g.specs()[3] {
            LayerSpec::Dense { inputs, .. } => assert_eq!(*inputs, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_invariants() {
        assert!(build_cnn(&CnnConfig {
            kernel_sizes: [3, 5, 6],
            ..tiny()
        })
        .is_err());
        assert!(build_cnn(&CnnConfig {
            max_length: 2,
            ..tiny()
        })
        .is_err());
        assert!(build_cnn(&CnnConfig {
            kernel_sizes: [0, 1, 2],
            ..tiny()
        })
        .is_err());
    }

    #[test]
    fn all_padding_row_gives_probabilities() {
        let g = build_cnn(&tiny()).unwrap();
        let (b, w) = cnn_predict(
            &g,
            &OciVector {
                indices: vec![0; 10],
            },
        )
        .unwrap();
        assert!(b.is_finite() && w.is_finite());
        assert!((b + w - 1.0).abs() < 1e-12);
        assert!(matches!(
            cnn_predict(
                &g,
                &OciVector {
                    indices: vec![0; 9]
                }
            ),
            Err(SrcError::Length { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let vocab = OpcodeVocabulary::parse("A\nB\nC\nD\nE\nF", "php").unwrap();
        let rows = vec![
            OciVector {
                indices: vec![1, 2, 3, 0, 0, 0, 0, 0, 0, 0]
            };
            4
        ];
        let (m, _) =
            SourceModel::train(&rows, &[0, 1, 0, 1], &tiny(), Language::Php, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wsnet");
        m.save(&p).unwrap();
        let back = SourceModel::load(&p).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.language, Language::Php);
        back.check_vocabulary(&vocab).unwrap();
        assert_eq!(
            cnn_predict(&back.graph, &rows[0]).unwrap(),
            cnn_predict(&m.graph, &rows[0]).unwrap()
        );
    }
}
