use serde::{Deserialize, Serialize};

use super::TrafficError;
use crate::flowmeter::{CATEGORICAL_FEATURES, CONTINUOUS_FEATURES};

/// Names and order of the model inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            categorical: CATEGORICAL_FEATURES.iter().map(|s| s.to_string()).collect(),
            continuous: CONTINUOUS_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureSchema {
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for n in self.categorical.iter().chain(&self.continuous) {
            text.push_str(n);
            text.push('\n');
        }
        text.push_str(&format!(
            "{}/{}",
            self.categorical.len(),
            self.continuous.len()
        ));
        crate::content_hash(text.as_bytes())
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if self
            .categorical
            .iter()
            .chain(&self.continuous)
            .any(|n| n.eq_ignore_ascii_case("label"))
        {
            return Err(TrafficError::Schema(
                "the label cannot be a model input".into(),
            ));
        }
        if *self != FeatureSchema::default() {
            return Err(TrafficError::Schema(
                "feature names differ from the flow feature set".into(),
            ));
        }
        Ok(())
    }
}

/// Embedding width for a categorical variable with `cardinality` values.
pub fn embedding_dim(cardinality: usize) -> usize {
    let d = (1.6 * (cardinality as f64).powf(0.56)).round() as usize;
    d.clamp(1, 600)
}

/// Values seen in training; index 0 is reserved for anything else.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryVocab {
    pub values: Vec<u32>,
}

impl CategoryVocab {
    pub fn fit(values: impl IntoIterator<Item = u32>) -> Self {
        let mut v: Vec<u32> = values.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        CategoryVocab { values: v }
    }

    pub fn index(&self, value: u32) -> usize {
        self.values.binary_search(&value).map_or(0, |i| i + 1)
    }

    /// Table size including the unknown slot.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 1
    }
}

/// Per-column z-score parameters from training data. Columns with zero
/// spread are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TrafficError> {
        let width = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| TrafficError::Data("no rows".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(TrafficError::Data(format!(
                    "row of width {} among rows of width {width}",
                    r.len()
                )));
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Normalizer { mean, std })
    }

    fn scale(&self, i: usize) -> f64 {
        if self.std[i] > 0.0 {
            self.std[i]
        } else {
            1.0
        }
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i]) / self.scale(i))
            .collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, z)| z * self.scale(i) + self.mean[i])
            .collect()
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schema_is_valid() {
        let s = FeatureSchema::default();
        s.validate().unwrap();
        assert_eq!((s.categorical.len(), s.continuous.len()), (2, 77));
        let mut leaky = s.clone();
        leaky.continuous.push("Label".into());
        assert!(leaky.validate().is_err());
        assert_ne!(leaky.hash(), s.hash());
    }

    #[test]
    fn embedding_rule() {
        // round(1.6 * c^0.56)
        assert_eq!(embedding_dim(2), 2);
        assert_eq!(embedding_dim(4), 3);
        assert_eq!(embedding_dim(100), 21);
        assert_eq!(embedding_dim(1), 2);
        assert_eq!(embedding_dim(10_000_000), 600);
    }

    #[test]
    fn unknown_values_go_to_zero() {
        let v = CategoryVocab::fit([443, 80, 80, 8080]);
        assert_eq!(v.values, [80, 443, 8080]);
        assert_eq!((v.index(80), v.index(8080), v.index(22)), (1, 3, 0));
        assert_eq!(v.cardinality(), 4);
    }

    #[test]
    fn constant_column_is_centered() {
        let n = Normalizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(n.normalize(&[3.0, 7.0]), [1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..20)) {
            let n = Normalizer::fit(&rows).unwrap();
            for r in &rows {
                let back = n.denormalize(&n.normalize(r));
                for (a, b) in r.iter().zip(&back) {
                    prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                }
            }
        }
    }
}
