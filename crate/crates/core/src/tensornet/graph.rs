use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, TrainCtx};
use super::{softmax, LayerSpec, NetError, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// An ordered stack of layers with its parameters.
///
/// In [`Mode::Eval`] the graph is deterministic: dropout is off and batch-norm
/// uses running statistics. [`ModelGraph::infer`] always runs in eval semantics
/// and takes `&self`, so a trained graph can serve concurrent callers.
pub struct ModelGraph {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
    mode: Mode,
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("input_shape", &self.input_shape)
            .field("output_shape", &self.output_shape)
            .field("layers", &self.specs.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl ModelGraph {
    /// Validates shapes end to end and initializes parameters from `seed`.
    pub fn build(
        specs: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        seed: u64,
    ) -> Result<Self, NetError> {
        let mut shape = input_shape.clone();
        for spec in &specs {
            shape = spec.output_shape(&shape)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.iter().map(|s| Layer::build(s, &mut rng)).collect();
        Ok(ModelGraph {
            specs,
            input_shape,
            output_shape: shape,
            layers,
            mode: Mode::Eval,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NetError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NetError::Shape(format!(
                "model expects [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Eval-semantics forward pass returning logits.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NetError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.eval(&h)?;
        }
        Ok(h)
    }

    /// Class probabilities for each row, eval semantics.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor, NetError> {
        Ok(softmax(&self.infer(x)?))
    }

    /// Forward pass honoring the current mode; in train mode caches for
    /// [`ModelGraph::backward`]. Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &mut self,
        x: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor, NetError> {
        if self.mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut ctx = TrainCtx { dropout_rng };
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, &mut ctx)?;
        }
        if !h.all_finite() {
            return Err(NetError::NonFinite(
                "forward pass produced a non-finite value".into(),
            ));
        }
        Ok(h)
    }

    /// Backpropagates `grad` (w.r.t. the last forward output) into parameter grads.
    pub fn backward(&mut self, grad: &Tensor) {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.collect_params(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Every persisted array in a fixed order: parameters and running statistics.
    pub fn state(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.visit_state(&mut |shape, values| out.push((shape.to_vec(), values.to_vec())));
        }
        out
    }

    /// Overwrites persisted arrays; `state` must come from an identically built graph.
    pub fn load_state(&mut self, state: Vec<Vec<f64>>) -> Result<(), NetError> {
        let expected: Vec<usize> = self.state().iter().map(|(_, v)| v.len()).collect();
        let got: Vec<usize> = state.iter().map(Vec::len).collect();
        if expected != got {
            return Err(NetError::Checkpoint(format!(
                "state layout mismatch: expected {expected:?}, got {got:?}"
            )));
        }
        let mut it = state.into_iter();
        for layer in &mut self.layers {
            layer.visit_state_mut(&mut |slot| *slot = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Running mean/variance pairs of every batch-norm layer.
    pub fn running_stats_mut(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.running_stats_mut(&mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_rejects_incompatible_stack() {
        let specs = vec![
            LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            },
            LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            },
        ];
        assert!(ModelGraph::build(specs, vec![3], 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let specs = vec![LayerSpec::Dense {
            inputs: 3,
            outputs: 2,
        }];
        let a = ModelGraph::build(specs.clone(), vec![3], 5).unwrap();
        let b = ModelGraph::build(specs, vec![3], 5).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn infer_checks_input_shape() {
        let g = ModelGraph::build(
            vec![LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            }],
            vec![3],
            0,
        )
        .unwrap();
        assert!(g.infer(&Tensor::zeros(vec![2, 4])).is_err());
        assert_eq!(
            g.infer(&Tensor::zeros(vec![2, 3])).unwrap().shape(),
            &[2, 2]
        );
    }
}
