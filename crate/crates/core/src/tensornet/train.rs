use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    softmax_cross_entropy, AdamConfig, AdamState, ClassWeights, Mode, ModelGraph, NetError, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Class-weighted loss when set.
    pub weights: Option<ClassWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean training loss over the epoch's batches (weighted by batch size).
    pub loss: f64,
    /// Training accuracy of the in-epoch predictions.
    pub accuracy: f64,
}

/// Mini-batch training with Adam. Shuffling and dropout are driven by
/// `opts.seed`, so identical inputs give bit-identical results.
///
/// A trailing batch of one row is folded into the previous batch so batch-norm
/// always sees at least two rows.
pub fn fit(
    model: &mut ModelGraph,
    inputs: &Tensor,
    labels: &[usize],
    opts: &FitOptions,
) -> Result<Vec<EpochStats>, NetError> {
    let n = inputs.rows();
    if n == 0 {
        return Err(NetError::Input("empty training set".into()));
    }
    if labels.len() != n {
        return Err(NetError::Input(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if opts.batch_size < 1 {
        return Err(NetError::Input("batch size must be at least 1".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(NetError::Input(format!("label {bad} is not 0 or 1")));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new(opts.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(opts.epochs);

    model.set_mode(Mode::Train);
    for _ in 0..opts.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut batches: Vec<&[usize]> = order.chunks(opts.batch_size).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
            let k = batches.len() - 1;
            let start = k * opts.batch_size;
            batches[k] = &order[start..];
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches {
            let x = inputs.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let logits = match model.forward(&x, Some(&mut dropout_rng)) {
                Ok(l) => l,
                Err(e) => {
                    model.set_mode(Mode::Eval);
                    return Err(e);
                }
            };
            let (loss, grad) = softmax_cross_entropy(&logits, &y, opts.weights)?;
            model.backward(&grad);
            if let Err(e) = adam.step(&mut model.params_mut()) {
                model.set_mode(Mode::Eval);
                return Err(e);
            }
            loss_sum += loss * batch.len() as f64;
            for (r, &label) in y.iter().enumerate() {
                let row = logits.row(r);
                let pred = usize::from(row[1] > row[0]);
                correct += usize::from(pred == label);
            }
        }
        history.push(EpochStats {
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    model.set_mode(Mode::Eval);
    Ok(history)
}

/// Argmax class for each row of a probability or logit matrix.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            row.iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > row[best] { i } else { best })
        })
        .collect()
}
