use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::schema::{embedding_dim, CategoryVocab, FeatureSchema, Normalizer};
use super::TrafficError;
use crate::flowmeter::{model_inputs, FeatureRecord, ModelInputs};
use crate::tensornet::{
    checkpoint, class_weights, fit, AdamConfig, EpochStats, FitOptions, LayerSpec, ModelGraph,
    Tensor,
};

pub const DEFAULT_HIDDEN: [usize; 2] = [400, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Class-weighted cross-entropy with inverse-frequency weights.
    pub weighted: bool,
    /// Embedding widths for Dst Port and Protocol; derived from the
    /// training cardinalities when unset.
    pub embedding_dims: Option<[usize; 2]>,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            learning_rate: 0.003,
            batch_size: 64,
            epochs: 2,
            weighted: true,
            embedding_dims: None,
            seed: 0,
        }
    }
}

impl TabularConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(TrafficError::Config(format!(
                "hidden widths {:?} must be positive",
                self.hidden
            )));
        }
        if self.embedding_dims.is_some_and(|d| d.contains(&0)) {
            return Err(TrafficError::Config(
                "embedding widths must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(TrafficError::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Input row layout: `[port index, protocol index, continuous...]`.
pub fn build_dnn(
    cardinalities: [usize; 2],
    embedding_dims: [usize; 2],
    continuous: usize,
    hidden: &[usize],
    seed: u64,
) -> Result<ModelGraph, TrafficError> {
    if hidden.is_empty()
        || hidden.contains(&0)
        || embedding_dims.contains(&0)
        || cardinalities.contains(&0)
    {
        return Err(TrafficError::Config(
            "widths and cardinalities must be positive".into(),
        ));
    }
    let embed = |col: usize| {
        vec![
            LayerSpec::Columns {
                start: col,
                end: col + 1,
            },
            LayerSpec::Embedding {
                num_embeddings: cardinalities[col],
                dim: embedding_dims[col],
                padding_index: None,
            },
            LayerSpec::Flatten,
        ]
    };
    let mut specs = vec![LayerSpec::Concat {
        branches: vec![
            embed(0),
            embed(1),
            vec![LayerSpec::Columns {
                start: 2,
                end: 2 + continuous,
            }],
        ],
    }];
    let mut width = continuous + embedding_dims.iter().sum::<usize>();
    for &h in hidden {
        specs.push(LayerSpec::Dense {
            inputs: width,
            outputs: h,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::batch_norm(h));
        width = h;
    }
    specs.push(LayerSpec::Dense {
        inputs: width,
        outputs: 2,
    });
    Ok(ModelGraph::build(specs, vec![2 + continuous], seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_benign: f64,
    pub p_webshell: f64,
    /// Argmax: 0 benign, 1 webshell.
    pub class: usize,
}

/// A trained flow classifier with its fitted preprocessing.
#[derive(Debug)]
pub struct TrafficModel {
    pub graph: ModelGraph,
    pub schema: FeatureSchema,
    pub config: TabularConfig,
    pub vocabs: [CategoryVocab; 2],
    pub embedding_dims: [usize; 2],
    pub normalizer: Normalizer,
}

impl TrafficModel {
    fn encode(&self, inputs: &[ModelInputs]) -> Result<Tensor, TrafficError> {
        let width = self.normalizer.width();
        let mut data = Vec::with_capacity(inputs.len() * (width + 2));
        for (i, m) in inputs.iter().enumerate() {
            if m.continuous.len() != width {
                return Err(TrafficError::Schema(format!(
                    "row {i} has {} continuous values, model expects {width}",
                    m.continuous.len()
                )));
            }
            data.push(self.vocabs[0].index(m.categorical[0]) as f64);
            data.push(self.vocabs[1].index(m.categorical[1]) as f64);
            data.extend(self.normalizer.normalize(&m.continuous));
        }
        Ok(Tensor::new(vec![inputs.len(), width + 2], data)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrafficError> {
        let meta = json!({
            "kind": "trafficmodel",
            "schema_hash": self.schema.hash(),
            "schema": self.schema,
            "config": self.config,
            "vocabs": self.vocabs,
            "embedding_dims": self.embedding_dims,
            "normalizer": self.normalizer,
        });
        Ok(checkpoint::save(path, &self.graph, &meta)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrafficError> {
        let (graph, meta) = checkpoint::load(path)?;
        if meta["kind"] != "trafficmodel" {
            return Err(TrafficError::Config(format!(
                "{} is not a flow model checkpoint",
                path.display()
            )));
        }
        let field =
            |key: &str| TrafficError::Config(format!("checkpoint metadata lacks a valid `{key}`"));
        let schema: FeatureSchema =
            serde_json::from_value(meta["schema"].clone()).map_err(|_| field("schema"))?;
        if meta["schema_hash"].as_str() != Some(schema.hash().as_str()) {
            return Err(TrafficError::Schema(
                "stored schema does not match its hash".into(),
            ));
        }
        if schema.hash() != FeatureSchema::default().hash() {
            return Err(TrafficError::Schema(
                "model was trained on a different feature set".into(),
            ));
        }
        Ok(TrafficModel {
            graph,
            schema,
            config: serde_json::from_value(meta["config"].clone()).map_err(|_| field("config"))?,
            vocabs: serde_json::from_value(meta["vocabs"].clone()).map_err(|_| field("vocabs"))?,
            embedding_dims: serde_json::from_value(meta["embedding_dims"].clone())
                .map_err(|_| field("embedding_dims"))?,
            normalizer: serde_json::from_value(meta["normalizer"].clone())
                .map_err(|_| field("normalizer"))?,
        })
    }
}

fn labels_of(records: &[FeatureRecord]) -> Result<Vec<usize>, TrafficError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label_value()
                .ok_or_else(|| TrafficError::Data(format!("record {i} has no label")))
        })
        .collect()
}

/// Trains on labelled flow records (`Benign` = 0, anything else = 1).
pub fn train_dnn(
    records: &[FeatureRecord],
    config: &TabularConfig,
) -> Result<(TrafficModel, Vec<EpochStats>), TrafficError> {
    let labels = labels_of(records)?;
    let inputs: Vec<ModelInputs> = records.iter().map(model_inputs).collect();
    train_dnn_inputs(&inputs, &labels, config)
}

pub fn train_dnn_inputs(
    inputs: &[ModelInputs],
    labels: &[usize],
    config: &TabularConfig,
) -> Result<(TrafficModel, Vec<EpochStats>), TrafficError> {
    config.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(TrafficError::Data(format!(
            "{} rows with {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let schema = FeatureSchema::default();
    schema.validate()?;
    let nw = labels.iter().filter(|&&y| y == 1).count();
    let weights = if config.weighted {
        Some(class_weights(labels.len() - nw, nw).map_err(|e| TrafficError::Data(e.to_string()))?)
    } else {
        None
    };
    let vocabs = [
        CategoryVocab::fit(inputs.iter().map(|m| m.categorical[0])),
        CategoryVocab::fit(inputs.iter().map(|m| m.categorical[1])),
    ];
    let cards = [vocabs[0].cardinality(), vocabs[1].cardinality()];
    let embedding_dims = config
        .embedding_dims
        .unwrap_or([embedding_dim(cards[0]), embedding_dim(cards[1])]);
    let rows: Vec<&[f64]> = inputs.iter().map(|m| m.continuous.as_slice()).collect();
    let normalizer = Normalizer::fit(&rows)?;
    if normalizer.width() != schema.continuous.len() {
        return Err(TrafficError::Schema(format!(
            "{} continuous values per row, schema has {}",
            normalizer.width(),
            schema.continuous.len()
        )));
    }
    let graph = build_dnn(
        cards,
        embedding_dims,
        normalizer.width(),
        &config.hidden,
        config.seed,
    )?;
    let mut model = TrafficModel {
        graph,
        schema,
        config: config.clone(),
        vocabs,
        embedding_dims,
        normalizer,
    };
    let x = model.encode(inputs)?;
    let opts = FitOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        adam: AdamConfig::with_lr(config.learning_rate),
        weights,
    };
    let history = fit(&mut model.graph, &x, labels, &opts)?;
    Ok((model, history))
}

/// Eval-mode class probabilities, one per input row, in order.
pub fn dnn_predict(
    model: &TrafficModel,
    inputs: &[ModelInputs],
) -> Result<Vec<Prediction>, TrafficError> {
    if model.schema.hash() != FeatureSchema::default().hash() {
        return Err(TrafficError::Schema(
            "model schema differs from the flow feature set".into(),
        ));
    }
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let p = model.graph.predict_proba(&model.encode(inputs)?)?;
    Ok((0..p.rows())
        .map(|i| {
            let (b, w) = (p.row(i)[0], p.row(i)[1]);
            Prediction {
                p_benign: b,
                p_webshell: w,
                class: usize::from(w > b),
            }
        })
        .collect())
}
