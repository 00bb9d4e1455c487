use super::{softmax_cross_entropy, ClassWeights, Mode, ModelGraph, NetError, Tensor};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error floor so that gradients which are both ~0 are not compared
/// purely on rounding noise.
const REL_FLOOR: f64 = 1e-6;

fn loss_at(
    model: &mut ModelGraph,
    x: &Tensor,
    y: &[usize],
    w: Option<ClassWeights>,
) -> Result<f64, NetError> {
    let logits = model.forward(x, None)?;
    Ok(softmax_cross_entropy(&logits, y, w)?.0)
}

/// Compares backprop gradients of softmax cross-entropy against central
/// finite differences for every trainable parameter entry and returns the
/// largest relative error `|a - n| / max(|a|, |n|, 1e-6)`.
///
/// Runs in train mode without dropout (batch-norm uses batch statistics).
/// Parameter values are restored afterwards; the mode is left as it was.
pub fn grad_check(
    model: &mut ModelGraph,
    x: &Tensor,
    labels: &[usize],
    weights: Option<ClassWeights>,
) -> Result<f64, NetError> {
    let prev_mode = model.mode();
    model.set_mode(Mode::Train);
    model.zero_grad();
    let logits = model.forward(x, None)?;
    let (_, grad) = softmax_cross_entropy(&logits, labels, weights)?;
    model.backward(&grad);
    let analytic: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut worst: f64 = 0.0;
    for (pi, analytic_p) in analytic.iter().enumerate() {
        for i in 0..analytic_p.len() {
            if model.params_mut()[pi].is_frozen(i) {
                continue;
            }
            let orig = model.params_mut()[pi].value[i];
            model.params_mut()[pi].value[i] = orig + FD_STEP;
            let plus = loss_at(model, x, labels, weights);
            model.params_mut()[pi].value[i] = orig - FD_STEP;
            let minus = loss_at(model, x, labels, weights);
            model.params_mut()[pi].value[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * FD_STEP);
            let a = analytic_p[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    model.set_mode(prev_mode);
    Ok(worst)
}
