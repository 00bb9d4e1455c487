use serde::{Deserialize, Serialize};

use super::{NetError, Tensor};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(vec![logits.rows(), k], out).expect("softmax keeps shape")
}

/// Per-class loss multipliers for the two-class problem (0 = benign, 1 = webshell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub benign: f64,
    pub webshell: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        benign: 1.0,
        webshell: 1.0,
    };

    pub fn for_label(&self, label: usize) -> f64 {
        if label == 0 {
            self.benign
        } else {
            self.webshell
        }
    }
}

/// Inverse-frequency weights: each class gets `(nB + nW) / (2 n_class)`, so
/// `nB * wB + nW * wW == nB + nW`.
pub fn class_weights(n_benign: usize, n_webshell: usize) -> Result<ClassWeights, NetError> {
    if n_benign == 0 || n_webshell == 0 {
        return Err(NetError::Input(format!(
            "class weights need both classes present (benign={n_benign}, webshell={n_webshell})"
        )));
    }
    let total = (n_benign + n_webshell) as f64;
    Ok(ClassWeights {
        benign: total / (2.0 * n_benign as f64),
        webshell: total / (2.0 * n_webshell as f64),
    })
}

fn check_labels(rows: usize, k: usize, labels: &[usize]) -> Result<(), NetError> {
    if labels.len() != rows {
        return Err(NetError::Input(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NetError::Input(format!("label {bad} outside {k} classes")));
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class; each term is scaled by its
/// class weight when `weights` is given (still averaged over the batch size).
pub fn cross_entropy(
    probs: &Tensor,
    labels: &[usize],
    weights: Option<ClassWeights>,
) -> Result<f64, NetError> {
    let n = probs.rows();
    check_labels(n, probs.row_len(), labels)?;
    if n == 0 {
        return Err(NetError::Input("empty batch".into()));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let term = -probs.row(r)[y].max(PROB_FLOOR).ln();
        total += match weights {
            Some(w) => term * w.for_label(y),
            None => term,
        };
    }
    Ok(total / n as f64)
}

/// Fused softmax + cross-entropy: returns the loss and `d loss / d logits`,
/// which is `(p - onehot(y)) * weight / batch`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    weights: Option<ClassWeights>,
) -> Result<(f64, Tensor), NetError> {
    let probs = softmax(logits);
    let loss = cross_entropy(&probs, labels, weights)?;
    let n = logits.rows() as f64;
    let k = logits.row_len();
    let mut grad = probs.into_data();
    for (r, &y) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w.for_label(y));
        let row = &mut grad[r * k..(r + 1) * k];
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= w / n);
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}
