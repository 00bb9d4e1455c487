use serde::{Deserialize, Serialize};

use super::EvalError;

/// Binary confusion counts with webshell (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts from parallel label / prediction slices (non-zero means positive).
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self, EvalError> {
        if labels.len() != predictions.len() {
            return Err(EvalError::Input(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y != 0, p != 0) {
                (true, true) => cm.tp += 1,
                (false, true) => cm.fp += 1,
                (true, false) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// All values are percentages in `[0, 100]`. A metric whose denominator is
/// zero is reported as 0 and its name is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricReport {
    /// Copy with every metric rounded to two decimals, for display.
    pub fn rounded(&self) -> MetricReport {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        MetricReport {
            accuracy: r(self.accuracy),
            precision: r(self.precision),
            recall: r(self.recall),
            specificity: r(self.specificity),
            f1: r(self.f1),
            fpr: r(self.fpr),
            fnr: r(self.fnr),
            undefined: self.undefined.clone(),
        }
    }
}

/// Standard binary classification metrics. Accuracy is `(TP+TN)/total`.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Input("confusion matrix is all zero".into()));
    }
    let mut undefined = Vec::new();
    let mut pct = |name: &str, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let (tp, fp, fn_, tn) = (cm.tp, cm.fp, cm.fn_, cm.tn);
    let accuracy = pct("accuracy", tp + tn, tp + tn + fp + fn_);
    let precision = pct("precision", tp, tp + fp);
    let recall = pct("recall", tp, tp + fn_);
    let specificity = pct("specificity", tn, tn + fp);
    let f1 = pct("f1", 2 * tp, 2 * tp + fp + fn_);
    let fpr = pct("fpr", fp, fp + tn);
    let fnr = pct("fnr", fn_, fn_ + tp);
    Ok(MetricReport {
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        fpr,
        fnr,
        undefined,
    })
}

/// Area under the ROC curve from scores via the rank-sum statistic, with
/// tied scores given their average rank. `None` when one class is absent.
pub fn auc(labels: &[usize], scores: &[f64]) -> Option<f64> {
    assert_eq!(
        labels.len(),
        scores.len(),
        "labels and scores differ in length"
    );
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y != 0)
        .map(|(_, r)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn php_hybrid_table() {
        let m = metrics(&ConfusionMatrix::new(807, 17, 10, 1438)).unwrap();
        for (got, want) in [
            (m.accuracy, 98.81),
            (m.precision, 97.94),
            (m.recall, 98.78),
            (m.f1, 98.35),
            (m.fpr, 1.17),
            (m.fnr, 1.22),
        ] {
            assert!(close(got, want, 0.05), "{got} vs {want}");
        }
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn traffic_table() {
        let m = metrics(&ConfusionMatrix::new(87794, 48, 58, 281645)).unwrap();
        for (got, want) in [
            (m.accuracy, 99.97),
            (m.f1, 99.94),
            (m.fnr, 0.07),
            (m.fpr, 0.02),
        ] {
            assert!(close(got, want, 0.05), "{got} vs {want}");
        }
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = metrics(&ConfusionMatrix::new(5, 0, 0, 7)).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.specificity, m.f1),
            (100.0, 100.0, 100.0, 100.0, 100.0)
        );
        assert_eq!((m.fpr, m.fnr), (0.0, 0.0));
        assert!(metrics(&ConfusionMatrix::default()).is_err());
        let only_neg = metrics(&ConfusionMatrix::new(0, 0, 0, 9)).unwrap();
        assert_eq!(only_neg.precision, 0.0);
        assert!(only_neg.undefined.contains(&"precision".to_string()));
        assert!(only_neg.undefined.contains(&"recall".to_string()));
    }

    #[test]
    fn from_predictions_counts() {
        let cm = ConfusionMatrix::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 1, 1, 1));
        assert!(ConfusionMatrix::from_predictions(&[1], &[]).is_err());
    }

    #[test]
    fn auc_known_values() {
        assert_eq!(auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]), Some(1.0));
        assert_eq!(auc(&[1, 1, 0, 0], &[0.1, 0.2, 0.8, 0.9]), Some(0.0));
        assert_eq!(auc(&[0, 1], &[0.5, 0.5]), Some(0.5));
        // one of four positive/negative pairs misordered
        assert_eq!(auc(&[0, 1, 0, 1], &[0.1, 0.3, 0.4, 0.9]), Some(0.75));
        assert_eq!(auc(&[1, 1], &[0.1, 0.2]), None);
    }

    proptest! {
        #[test]
        fn scale_invariant(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000, k in 2u64..50) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let a = metrics(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            let b = metrics(&ConfusionMatrix::new(tp * k, fp * k, fn_ * k, tn * k)).unwrap();
            for (x, y) in [(a.accuracy, b.accuracy), (a.precision, b.precision), (a.recall, b.recall),
                           (a.specificity, b.specificity), (a.f1, b.f1), (a.fpr, b.fpr), (a.fnr, b.fnr)] {
                prop_assert!(close(x, y, 1e-9));
            }
            prop_assert_eq!(a.undefined, b.undefined);
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 1u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
            let m = metrics(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!(close(m.f1, h, 1e-9));
            for v in [m.accuracy, m.precision, m.recall, m.specificity, m.f1, m.fpr, m.fnr] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }

        #[test]
        fn auc_matches_pair_count(pairs in prop::collection::vec((0usize..2, 0u8..6), 2..40)) {
            let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let scores: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let got = auc(&labels, &scores);
            let pos: Vec<f64> = pairs.iter().filter(|p| p.0 == 1).map(|p| p.1 as f64).collect();
            let neg: Vec<f64> = pairs.iter().filter(|p| p.0 == 0).map(|p| p.1 as f64).collect();
            if pos.is_empty() || neg.is_empty() {
                prop_assert_eq!(got, None);
            } else {
                let mut wins = 0.0;
                for p in &pos {
                    for n in &neg {
                        wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                    }
                }
                prop_assert!(close(got.unwrap(), wins / (pos.len() * neg.len()) as f64, 1e-12));
            }
        }
    }
}
