use serde::{Deserialize, Serialize};

use super::dnn::{dnn_predict, train_dnn_inputs, TabularConfig};
use super::TrafficError;
use crate::evalkit::{
    auc, fold_train_indices, metrics, stratified_folds, ConfusionMatrix, MetricReport,
};
use crate::flowmeter::{model_inputs, FeatureRecord, ModelInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    /// Arithmetic mean of the per-fold metrics.
    pub average: MetricReport,
    /// Mean over the folds where AUC is defined.
    pub average_auc: Option<f64>,
}

pub fn kfold_cv(
    records: &[FeatureRecord],
    k: usize,
    config: &TabularConfig,
) -> Result<KFoldReport, TrafficError> {
    let labels = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label_value()
                .ok_or_else(|| TrafficError::Data(format!("record {i} has no label")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<ModelInputs> = records.iter().map(model_inputs).collect();
    kfold_cv_inputs(&inputs, &labels, k, config)
}

/// Stratified k-fold cross-validation, a fresh model per fold. Fold
/// assignment depends only on the labels and `config.seed`.
pub fn kfold_cv_inputs(
    inputs: &[ModelInputs],
    labels: &[usize],
    k: usize,
    config: &TabularConfig,
) -> Result<KFoldReport, TrafficError> {
    if inputs.len() != labels.len() {
        return Err(TrafficError::Data(format!(
            "{} rows with {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let folds = stratified_folds(labels, k, config.seed)?;
    let mut results = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx = fold_train_indices(&folds, f);
        let pick = |idx: &[usize]| -> (Vec<ModelInputs>, Vec<usize>) {
            (
                idx.iter().map(|&i| inputs[i].clone()).collect(),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        };
        let (train_x, train_y) = pick(&train_idx);
        let (test_x, test_y) = pick(test_idx);
        let (model, _) = train_dnn_inputs(&train_x, &train_y, config)?;
        let preds = dnn_predict(&model, &test_x)?;
        let classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let scores: Vec<f64> = preds.iter().map(|p| p.p_webshell).collect();
        let confusion = ConfusionMatrix::from_predictions(&test_y, &classes)?;
        results.push(FoldResult {
            fold: f,
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            metrics: metrics(&confusion)?,
            confusion,
            auc: auc(&test_y, &scores),
        });
    }
    let mean = |get: fn(&MetricReport) -> f64| {
        results.iter().map(|r| get(&r.metrics)).sum::<f64>() / k as f64
    };
    let mut undefined: Vec<String> = results
        .iter()
        .flat_map(|r| r.metrics.undefined.clone())
        .collect();
    undefined.sort();
    undefined.dedup();
    let average = MetricReport {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        specificity: mean(|m| m.specificity),
        f1: mean(|m| m.f1),
        fpr: mean(|m| m.fpr),
        fnr: mean(|m| m.fnr),
        undefined,
    };
    let aucs: Vec<f64> = results.iter().filter_map(|r| r.auc).collect();
    let average_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(KFoldReport {
        folds: results,
        average,
        average_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::super::dnn::tests::clusters;
    use super::*;

    #[test]
    fn five_folds_of_twenty() {
        let (x, y) = clusters(100, 9);
        let cfg = TabularConfig {
            hidden: vec![16, 8],
            ..Default::default()
        };
        let r = kfold_cv_inputs(&x, &y, 5, &cfg).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert!(r
            .folds
            .iter()
            .all(|f| f.test_size == 20 && f.train_size == 80));
        let acc: f64 = r.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / 5.0;
        assert!((r.average.accuracy - acc).abs() < 1e-12);
        assert_eq!(kfold_cv_inputs(&x, &y, 5, &cfg).unwrap(), r);
    }

    #[test]
    fn too_few_records() {
        let (x, y) = clusters(3, 1);
        assert!(kfold_cv_inputs(&x, &y, 5, &TabularConfig::default()).is_err());
    }
}
