use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dnn::{dnn_predict, Prediction, TrafficModel};
use super::TrafficError;
use crate::flowmeter::ModelInputs;
use crate::tensornet::checkpoint;

/// Anything that labels flows from their model inputs.
pub trait FlowClassifier: Send + Sync {
    fn classify(&self, inputs: &[ModelInputs]) -> Result<Vec<Prediction>, TrafficError>;
}

impl FlowClassifier for TrafficModel {
    fn classify(&self, inputs: &[ModelInputs]) -> Result<Vec<Prediction>, TrafficError> {
        dnn_predict(self, inputs)
    }
}

/// Fixed-answer classifier for wiring tests: a flow is a webshell exactly
/// when its destination port is listed.
///
/// Stored as `{"stub": {"webshell_dst_ports": [8080]}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StubClassifier {
    #[serde(default)]
    pub webshell_dst_ports: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct StubFile {
    stub: StubClassifier,
}

impl StubClassifier {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&StubFile { stub: self.clone() }).expect("stub serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrafficError> {
        let f: StubFile = serde_json::from_str(text)
            .map_err(|e| TrafficError::Config(format!("stub model: {e}")))?;
        Ok(f.stub)
    }
}

impl FlowClassifier for StubClassifier {
    fn classify(&self, inputs: &[ModelInputs]) -> Result<Vec<Prediction>, TrafficError> {
        Ok(inputs
            .iter()
            .map(|m| {
                let hit = self.webshell_dst_ports.contains(&m.categorical[0]);
                let w = if hit { 1.0 } else { 0.0 };
                Prediction {
                    p_benign: 1.0 - w,
                    p_webshell: w,
                    class: usize::from(hit),
                }
            })
            .collect())
    }
}

/// Loads a trained checkpoint or a JSON stub, whichever `path` holds.
pub fn load_flow_classifier(path: &Path) -> Result<Box<dyn FlowClassifier>, TrafficError> {
    let bytes =
        std::fs::read(path).map_err(|e| TrafficError::Io(format!("{}: {e}", path.display())))?;
    if checkpoint::is_checkpoint(&bytes) {
        return Ok(Box::new(TrafficModel::load(path)?));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| TrafficError::Config(format!("{} is not a model", path.display())))?;
    Ok(Box::new(StubClassifier::from_json(&text)?))
}
