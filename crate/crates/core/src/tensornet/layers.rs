use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NetError, Tensor};

/// Declarative description of one layer; a graph is an ordered list of these.
///
/// Shapes below exclude the batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[..]` of integer indices -> `[.., dim]`.
    Embedding {
        num_embeddings: usize,
        dim: usize,
        /// Row pinned at zero and never updated.
        padding_index: Option<usize>,
    },
    /// `[len, in_channels]` -> `[len - kernel + 1, out_channels]`, valid padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    /// `[len, features]` -> `[features]`.
    GlobalMaxPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    BatchNorm1d {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Dropout {
        rate: f64,
    },
    /// `[n]` -> `[end - start]`.
    Columns {
        start: usize,
        end: usize,
    },
    Flatten,
    /// Every branch sees the same input; their flat outputs are concatenated.
    Concat {
        branches: Vec<Vec<LayerSpec>>,
    },
}

impl LayerSpec {
    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm1d {
            features,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        let shape_err = |msg: String| Err(NetError::Shape(msg));
        match self {
            LayerSpec::Embedding {
                num_embeddings,
                dim,
                padding_index,
            } => {
                if *num_embeddings == 0 || *dim == 0 {
                    return shape_err("embedding needs a non-empty table".into());
                }
                if let Some(p) = padding_index {
                    if p >= num_embeddings {
                        return shape_err(format!("padding index {p} outside table"));
                    }
                }
                let mut out = input.to_vec();
                out.push(*dim);
                Ok(out)
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => match input {
                [len, c] if c == in_channels && *kernel >= 1 && len >= kernel => {
                    Ok(vec![len - kernel + 1, *out_channels])
                }
                _ => shape_err(format!(
                    "conv1d(k={kernel}, in={in_channels}) cannot take input {input:?}"
                )),
            },
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::GlobalMaxPool => match input {
                [len, f] if *len >= 1 => Ok(vec![*f]),
                _ => shape_err(format!("global max pool cannot take input {input:?}")),
            },
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if n == inputs => Ok(vec![*outputs]),
                _ => shape_err(format!(
                    "dense({inputs}->{outputs}) cannot take input {input:?}"
                )),
            },
            LayerSpec::BatchNorm1d { features, .. } => match input {
                [n] if n == features => Ok(vec![*n]),
                _ => shape_err(format!("batchnorm({features}) cannot take input {input:?}")),
            },
            LayerSpec::Columns { start, end } => match input {
                [n] if start < end && end <= n => Ok(vec![end - start]),
                _ => shape_err(format!("columns {start}..{end} out of input {input:?}")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Concat { branches } => {
                if branches.is_empty() {
                    return shape_err("concat needs at least one branch".into());
                }
                let mut width = 0;
                for branch in branches {
                    let mut shape = input.to_vec();
                    for spec in branch {
                        shape = spec.output_shape(&shape)?;
                    }
                    match shape.as_slice() {
                        [n] => width += n,
                        other => {
                            return shape_err(format!(
                                "concat branch ends in non-flat shape {other:?}"
                            ))
                        }
                    }
                }
                Ok(vec![width])
            }
        }
    }
}

/// Trainable parameter with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    frozen: Option<Range<usize>>,
}

impl Param {
    fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        Param {
            value,
            grad: vec![0.0; n],
            shape,
            frozen: None,
        }
    }

    /// Entries that the optimizer and gradient checks must leave alone.
    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.as_ref().is_some_and(|r| r.contains(&i))
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Forward-pass settings while training.
pub(crate) struct TrainCtx<'a> {
    /// Dropout masks are drawn from here; `None` disables dropout.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

pub(crate) struct Embedding {
    num: usize,
    dim: usize,
    padding: Option<usize>,
    weight: Param,
    input: Option<Tensor>,
}

pub(crate) struct Conv1d {
    cin: usize,
    cout: usize,
    k: usize,
    /// `[cout, k * cin]`, window-major so a window of rows is one contiguous slice.
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

pub(crate) struct Dense {
    nin: usize,
    nout: usize,
    /// `[nout, nin]`
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

pub(crate) struct BatchNorm1d {
    features: usize,
    eps: f64,
    momentum: f64,
    gamma: Param,
    beta: Param,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

pub(crate) enum Layer {
    Embedding(Embedding),
    Conv1d(Conv1d),
    Relu {
        mask: Vec<bool>,
    },
    GlobalMaxPool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Dense(Dense),
    BatchNorm1d(BatchNorm1d),
    Dropout {
        rate: f64,
        mask: Option<Vec<f64>>,
    },
    Columns {
        start: usize,
        end: usize,
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Concat {
        branches: Vec<Vec<Layer>>,
        widths: Vec<usize>,
        in_shape: Vec<usize>,
    },
}

impl Layer {
    pub(crate) fn build(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
        match spec {
            LayerSpec::Embedding {
                num_embeddings,
                dim,
                padding_index,
            } => {
                let normal = Normal::new(0.0, 0.01).expect("valid std");
                let mut value: Vec<f64> = (0..num_embeddings * dim)
                    .map(|_| normal.sample(rng))
                    .collect();
                let mut weight_frozen = None;
                if let Some(p) = padding_index {
                    let rows = p * dim..(p + 1) * dim;
                    value[rows.clone()].iter_mut().for_each(|v| *v = 0.0);
                    weight_frozen = Some(rows);
                }
                let mut weight = Param::new(vec![*num_embeddings, *dim], value);
                weight.frozen = weight_frozen;
                Layer::Embedding(Embedding {
                    num: *num_embeddings,
                    dim: *dim,
                    padding: *padding_index,
                    weight,
                    input: None,
                })
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let n = out_channels * kernel * in_channels;
                let w = glorot(rng, in_channels * kernel, out_channels * kernel, n);
                Layer::Conv1d(Conv1d {
                    cin: *in_channels,
                    cout: *out_channels,
                    k: *kernel,
                    weight: Param::new(vec![*out_channels, kernel * in_channels], w),
                    bias: Param::new(vec![*out_channels], vec![0.0; *out_channels]),
                    input: None,
                })
            }
            LayerSpec::Relu => Layer::Relu { mask: Vec::new() },
            LayerSpec::GlobalMaxPool => Layer::GlobalMaxPool {
                argmax: Vec::new(),
                in_shape: Vec::new(),
            },
            LayerSpec::Dense { inputs, outputs } => {
                let w = glorot(rng, *inputs, *outputs, inputs * outputs);
                Layer::Dense(Dense {
                    nin: *inputs,
                    nout: *outputs,
                    weight: Param::new(vec![*outputs, *inputs], w),
                    bias: Param::new(vec![*outputs], vec![0.0; *outputs]),
                    input: None,
                })
            }
            LayerSpec::BatchNorm1d {
                features,
                eps,
                momentum,
            } => Layer::BatchNorm1d(BatchNorm1d {
                features: *features,
                eps: *eps,
                momentum: *momentum,
                gamma: Param::new(vec![*features], vec![1.0; *features]),
                beta: Param::new(vec![*features], vec![0.0; *features]),
                running_mean: vec![0.0; *features],
                running_var: vec![1.0; *features],
                cache: None,
            }),
            LayerSpec::Dropout { rate } => Layer::Dropout {
                rate: *rate,
                mask: None,
            },
            LayerSpec::Columns { start, end } => Layer::Columns {
                start: *start,
                end: *end,
                in_shape: Vec::new(),
            },
            LayerSpec::Flatten => Layer::Flatten {
                in_shape: Vec::new(),
            },
            LayerSpec::Concat { branches } => Layer::Concat {
                branches: branches
                    .iter()
                    .map(|b| b.iter().map(|s| Layer::build(s, rng)).collect())
                    .collect(),
                widths: Vec::new(),
                in_shape: Vec::new(),
            },
        }
    }

    /// Inference pass: no caches, dropout off, batch-norm on running statistics.
    pub(crate) fn eval(&self, x: &Tensor) -> Result<Tensor, NetError> {
        match self {
            Layer::Embedding(e) => e.lookup(x),
            Layer::Conv1d(c) => c.compute(x),
            Layer::Relu { .. } => Ok(relu(x).0),
            Layer::GlobalMaxPool { .. } => Ok(max_pool(x)?.0),
            Layer::Dense(d) => d.compute(x),
            Layer::BatchNorm1d(bn) => bn.eval(x),
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::Columns { start, end, .. } => columns(x, *start, *end),
            Layer::Flatten { .. } => flatten(x),
            Layer::Concat { branches, .. } => {
                let outs = branches
                    .iter()
                    .map(|b| b.iter().try_fold(x.clone(), |h, l| l.eval(&h)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(concat(&outs)?.0)
            }
        }
    }

    /// Training pass; caches whatever `backward` needs.
    pub(crate) fn forward(
        &mut self,
        x: &Tensor,
        ctx: &mut TrainCtx<'_>,
    ) -> Result<Tensor, NetError> {
        match self {
            Layer::Embedding(e) => {
                let out = e.lookup(x)?;
                e.input = Some(x.clone());
                Ok(out)
            }
            Layer::Conv1d(c) => {
                let out = c.compute(x)?;
                c.input = Some(x.clone());
                Ok(out)
            }
            Layer::Relu { mask } => {
                let (out, m) = relu(x);
                *mask = m;
                Ok(out)
            }
            Layer::GlobalMaxPool { argmax, in_shape } => {
                let (out, idx) = max_pool(x)?;
                *argmax = idx;
                *in_shape = x.shape().to_vec();
                Ok(out)
            }
            Layer::Dense(d) => {
                let out = d.compute(x)?;
                d.input = Some(x.clone());
                Ok(out)
            }
            Layer::BatchNorm1d(bn) => bn.train(x),
            Layer::Dropout { rate, mask } => match ctx.dropout_rng.as_deref_mut() {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let m: Vec<f64> = (0..x.len())
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let data = x.data().iter().zip(&m).map(|(v, k)| v * k).collect();
                    *mask = Some(m);
                    Tensor::new(x.shape().to_vec(), data)
                }
                _ => {
                    *mask = None;
                    Ok(x.clone())
                }
            },
            Layer::Columns {
                start,
                end,
                in_shape,
            } => {
                *in_shape = x.shape().to_vec();
                columns(x, *start, *end)
            }
            Layer::Flatten { in_shape } => {
                *in_shape = x.shape().to_vec();
                flatten(x)
            }
            Layer::Concat {
                branches,
                widths,
                in_shape,
            } => {
                *in_shape = x.shape().to_vec();
                let mut outs = Vec::with_capacity(branches.len());
                for branch in branches.iter_mut() {
                    let mut h = x.clone();
                    for layer in branch.iter_mut() {
                        h = layer.forward(&h, ctx)?;
                    }
                    outs.push(h);
                }
                let (out, w) = concat(&outs)?;
                *widths = w;
                Ok(out)
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub(crate) fn backward(&mut self, g: &Tensor) -> Tensor {
        match self {
            Layer::Embedding(e) => e.backward(g),
            Layer::Conv1d(c) => c.backward(g),
            Layer::Relu { mask } => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(v, &on)| if on { *v } else { 0.0 })
                    .collect();
                Tensor::new(g.shape().to_vec(), data).expect("relu grad shape")
            }
            Layer::GlobalMaxPool { argmax, in_shape } => {
                let mut gx = Tensor::zeros(in_shape.clone());
                let d = gx.data_mut();
                for (j, &pos) in argmax.iter().enumerate() {
                    d[pos] += g.data()[j];
                }
                gx
            }
            Layer::Dense(d) => d.backward(g),
            Layer::BatchNorm1d(bn) => bn.backward(g),
            Layer::Dropout { mask, .. } => match mask {
                Some(m) => {
                    let data = g.data().iter().zip(m.iter()).map(|(v, k)| v * k).collect();
                    Tensor::new(g.shape().to_vec(), data).expect("dropout grad shape")
                }
                None => g.clone(),
            },
            Layer::Columns {
                start,
                end,
                in_shape,
            } => {
                let mut gx = Tensor::zeros(in_shape.clone());
                let n = in_shape[1];
                let w = *end - *start;
                for b in 0..in_shape[0] {
                    gx.data_mut()[b * n + *start..b * n + *end]
                        .copy_from_slice(&g.data()[b * w..(b + 1) * w]);
                }
                gx
            }
            Layer::Flatten { in_shape } => g
                .clone()
                .reshape(in_shape.clone())
                .expect("flatten grad shape"),
            Layer::Concat {
                branches,
                widths,
                in_shape,
            } => {
                let batch = g.rows();
                let total: usize = widths.iter().sum();
                let mut gx = Tensor::zeros(in_shape.clone());
                let mut offset = 0;
                for (branch, &w) in branches.iter_mut().zip(widths.iter()) {
                    let mut part = Vec::with_capacity(batch * w);
                    for b in 0..batch {
                        part.extend_from_slice(
                            &g.data()[b * total + offset..b * total + offset + w],
                        );
                    }
                    let mut h = Tensor::new(vec![batch, w], part).expect("concat grad shape");
                    for layer in branch.iter_mut().rev() {
                        h = layer.backward(&h);
                    }
                    for (acc, v) in gx.data_mut().iter_mut().zip(h.data()) {
                        *acc += v;
                    }
                    offset += w;
                }
                gx
            }
        }
    }

    pub(crate) fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Embedding(e) => out.push(&mut e.weight),
            Layer::Conv1d(c) => {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            Layer::Dense(d) => {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
            Layer::BatchNorm1d(bn) => {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
            Layer::Concat { branches, .. } => {
                for layer in branches.iter_mut().flatten() {
                    layer.collect_params(out);
                }
            }
            _ => {}
        }
    }

    /// Every persisted array (parameters and running statistics), in a fixed order.
    pub(crate) fn visit_state(&self, f: &mut dyn FnMut(&[usize], &[f64])) {
        match self {
            Layer::Embedding(e) => f(&e.weight.shape, &e.weight.value),
            Layer::Conv1d(c) => {
                f(&c.weight.shape, &c.weight.value);
                f(&c.bias.shape, &c.bias.value);
            }
            Layer::Dense(d) => {
                f(&d.weight.shape, &d.weight.value);
                f(&d.bias.shape, &d.bias.value);
            }
            Layer::BatchNorm1d(bn) => {
                let shape = [bn.features];
                f(&shape, &bn.gamma.value);
                f(&shape, &bn.beta.value);
                f(&shape, &bn.running_mean);
                f(&shape, &bn.running_var);
            }
            Layer::Concat { branches, .. } => {
                for layer in branches.iter().flatten() {
                    layer.visit_state(f);
                }
            }
            _ => {}
        }
    }

    pub(crate) fn visit_state_mut(&mut self, f: &mut dyn FnMut(&mut Vec<f64>)) {
        match self {
            Layer::Embedding(e) => f(&mut e.weight.value),
            Layer::Conv1d(c) => {
                f(&mut c.weight.value);
                f(&mut c.bias.value);
            }
            Layer::Dense(d) => {
                f(&mut d.weight.value);
                f(&mut d.bias.value);
            }
            Layer::BatchNorm1d(bn) => {
                f(&mut bn.gamma.value);
                f(&mut bn.beta.value);
                f(&mut bn.running_mean);
                f(&mut bn.running_var);
            }
            Layer::Concat { branches, .. } => {
                for layer in branches.iter_mut().flatten() {
                    layer.visit_state_mut(f);
                }
            }
            _ => {}
        }
    }

    /// Mutable access to batch-norm layers, depth first.
    pub(crate) fn running_stats_mut<'a>(
        &'a mut self,
        out: &mut Vec<(&'a mut Vec<f64>, &'a mut Vec<f64>)>,
    ) {
        match self {
            Layer::BatchNorm1d(bn) => out.push((&mut bn.running_mean, &mut bn.running_var)),
            Layer::Concat { branches, .. } => {
                for layer in branches.iter_mut().flatten() {
                    layer.running_stats_mut(out);
                }
            }
            _ => {}
        }
    }
}

impl Embedding {
    fn index(&self, v: f64) -> Result<usize, NetError> {
        if v.fract() != 0.0 || v < 0.0 || v >= self.num as f64 {
            return Err(NetError::Input(format!(
                "embedding index {v} outside [0, {})",
                self.num
            )));
        }
        Ok(v as usize)
    }

    fn lookup(&self, x: &Tensor) -> Result<Tensor, NetError> {
        let d = self.dim;
        let mut data = Vec::with_capacity(x.len() * d);
        for &v in x.data() {
            let i = self.index(v)?;
            data.extend_from_slice(&self.weight.value[i * d..(i + 1) * d]);
        }
        let mut shape = x.shape().to_vec();
        shape.push(d);
        Tensor::new(shape, data)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let input = self
            .input
            .as_ref()
            .expect("embedding backward before forward");
        let d = self.dim;
        for (pos, &v) in input.data().iter().enumerate() {
            let i = v as usize;
            if Some(i) == self.padding {
                continue;
            }
            let src = &g.data()[pos * d..(pos + 1) * d];
            for (acc, s) in self.weight.grad[i * d..(i + 1) * d].iter_mut().zip(src) {
                *acc += s;
            }
        }
        Tensor::zeros(input.shape().to_vec())
    }
}

impl Conv1d {
    fn compute(&self, x: &Tensor) -> Result<Tensor, NetError> {
        let (b, len, c) = match x.shape() {
            [b, l, c] => (*b, *l, *c),
            s => {
                return Err(NetError::Shape(format!(
                    "conv1d expects [batch, len, channels], got {s:?}"
                )))
            }
        };
        if c != self.cin {
            return Err(NetError::Shape(format!(
                "conv1d expects {} channels, got {c}",
                self.cin
            )));
        }
        if len < self.k {
            return Err(NetError::Shape(format!(
                "sequence length {len} shorter than kernel {}",
                self.k
            )));
        }
        let out_len = len - self.k + 1;
        let win = self.k * c;
        let mut out = vec![0.0; b * out_len * self.cout];
        for s in 0..b {
            let xs = &x.data()[s * len * c..(s + 1) * len * c];
            for t in 0..out_len {
                let window = &xs[t * c..t * c + win];
                let o = &mut out[(s * out_len + t) * self.cout..(s * out_len + t + 1) * self.cout];
                for (f, of) in o.iter_mut().enumerate() {
                    let w = &self.weight.value[f * win..(f + 1) * win];
                    *of = self.bias.value[f] + dot(window, w);
                }
            }
        }
        Tensor::new(vec![b, out_len, self.cout], out)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let input = self.input.as_ref().expect("conv1d backward before forward");
        let (b, len, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let out_len = len - self.k + 1;
        let win = self.k * c;
        let mut gx = Tensor::zeros(input.shape().to_vec());
        for s in 0..b {
            let xs = &input.data()[s * len * c..(s + 1) * len * c];
            for t in 0..out_len {
                let window = &xs[t * c..t * c + win];
                let go =
                    &g.data()[(s * out_len + t) * self.cout..(s * out_len + t + 1) * self.cout];
                let gxw = &mut gx.data_mut()[s * len * c + t * c..s * len * c + t * c + win];
                for (f, &gv) in go.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    self.bias.grad[f] += gv;
                    let w = &self.weight.value[f * win..(f + 1) * win];
                    let gw = &mut self.weight.grad[f * win..(f + 1) * win];
                    for i in 0..win {
                        gw[i] += gv * window[i];
                        gxw[i] += gv * w[i];
                    }
                }
            }
        }
        gx
    }
}

impl Dense {
    fn compute(&self, x: &Tensor) -> Result<Tensor, NetError> {
        let b = match x.shape() {
            [b, n] if *n == self.nin => *b,
            s => {
                return Err(NetError::Shape(format!(
                    "dense expects [batch, {}], got {s:?}",
                    self.nin
                )))
            }
        };
        let mut out = vec![0.0; b * self.nout];
        for s in 0..b {
            let xs = x.row(s);
            for o in 0..self.nout {
                out[s * self.nout + o] = self.bias.value[o]
                    + dot(xs, &self.weight.value[o * self.nin..(o + 1) * self.nin]);
            }
        }
        Tensor::new(vec![b, self.nout], out)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let input = self.input.as_ref().expect("dense backward before forward");
        let b = input.rows();
        let mut gx = Tensor::zeros(input.shape().to_vec());
        for s in 0..b {
            let xs = input.row(s);
            let gs = &g.data()[s * self.nout..(s + 1) * self.nout];
            let gxs = &mut gx.data_mut()[s * self.nin..(s + 1) * self.nin];
            for (o, &gv) in gs.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                self.bias.grad[o] += gv;
                let w = &self.weight.value[o * self.nin..(o + 1) * self.nin];
                let gw = &mut self.weight.grad[o * self.nin..(o + 1) * self.nin];
                for i in 0..self.nin {
                    gw[i] += gv * xs[i];
                    gxs[i] += gv * w[i];
                }
            }
        }
        gx
    }
}

impl BatchNorm1d {
    fn check(&self, x: &Tensor) -> Result<usize, NetError> {
        match x.shape() {
            [b, f] if *f == self.features => Ok(*b),
            s => Err(NetError::Shape(format!(
                "batchnorm expects [batch, {}], got {s:?}",
                self.features
            ))),
        }
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor, NetError> {
        let b = self.check(x)?;
        let f = self.features;
        let mut out = x.data().to_vec();
        for s in 0..b {
            for j in 0..f {
                let v = &mut out[s * f + j];
                let xhat = (*v - self.running_mean[j]) / (self.running_var[j] + self.eps).sqrt();
                *v = self.gamma.value[j] * xhat + self.beta.value[j];
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    fn train(&mut self, x: &Tensor) -> Result<Tensor, NetError> {
        let b = self.check(x)?;
        if b < 2 {
            return Err(NetError::Input(
                "batch norm in train mode needs a batch of at least 2".into(),
            ));
        }
        let f = self.features;
        let n = b as f64;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for s in 0..b {
            for j in 0..f {
                mean[j] += x.data()[s * f + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for s in 0..b {
            for j in 0..f {
                let d = x.data()[s * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; b * f];
        let mut out = vec![0.0; b * f];
        for s in 0..b {
            for j in 0..f {
                let i = s * f + j;
                xhat[i] = (x.data()[i] - mean[j]) * inv_std[j];
                out[i] = self.gamma.value[j] * xhat[i] + self.beta.value[j];
            }
        }
        // Running variance tracks the unbiased estimate.
        let m = self.momentum;
        for j in 0..f {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * n / (n - 1.0);
        }
        self.cache = Some((xhat, inv_std));
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let (xhat, inv_std) = self
            .cache
            .as_ref()
            .expect("batchnorm backward before forward");
        let f = self.features;
        let b = g.rows();
        let n = b as f64;
        let mut sum_g = vec![0.0; f];
        let mut sum_gx = vec![0.0; f];
        for s in 0..b {
            for j in 0..f {
                let i = s * f + j;
                sum_g[j] += g.data()[i];
                sum_gx[j] += g.data()[i] * xhat[i];
            }
        }
        for j in 0..f {
            self.beta.grad[j] += sum_g[j];
            self.gamma.grad[j] += sum_gx[j];
        }
        let mut gx = vec![0.0; b * f];
        for s in 0..b {
            for j in 0..f {
                let i = s * f + j;
                let scale = self.gamma.value[j] * inv_std[j] / n;
                gx[i] = scale * (n * g.data()[i] - sum_g[j] - xhat[i] * sum_gx[j]);
            }
        }
        Tensor::new(g.shape().to_vec(), gx).expect("batchnorm grad shape")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|v| *v > 0.0).collect();
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    (
        Tensor::new(x.shape().to_vec(), data).expect("relu shape"),
        mask,
    )
}

/// Max over the sequence axis; ties resolve to the earliest position.
fn max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>), NetError> {
    let (b, len, f) = match x.shape() {
        [b, l, f] => (*b, *l, *f),
        s => {
            return Err(NetError::Shape(format!(
                "global max pool expects [batch, len, features], got {s:?}"
            )))
        }
    };
    if len == 0 {
        return Err(NetError::Shape(
            "global max pool over an empty sequence".into(),
        ));
    }
    let mut out = vec![f64::NEG_INFINITY; b * f];
    let mut argmax = vec![0usize; b * f];
    for s in 0..b {
        for t in 0..len {
            for j in 0..f {
                let i = (s * len + t) * f + j;
                let v = x.data()[i];
                if v > out[s * f + j] {
                    out[s * f + j] = v;
                    argmax[s * f + j] = i;
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, f], out)?, argmax))
}

fn columns(x: &Tensor, start: usize, end: usize) -> Result<Tensor, NetError> {
    let (b, n) = match x.shape() {
        [b, n] if end <= *n => (*b, *n),
        s => {
            return Err(NetError::Shape(format!(
                "columns {start}..{end} out of {s:?}"
            )))
        }
    };
    let mut data = Vec::with_capacity(b * (end - start));
    for s in 0..b {
        data.extend_from_slice(&x.data()[s * n + start..s * n + end]);
    }
    Tensor::new(vec![b, end - start], data)
}

fn flatten(x: &Tensor) -> Result<Tensor, NetError> {
    let b = x.rows();
    let w = x.row_len();
    x.clone().reshape(vec![b, w])
}

fn concat(parts: &[Tensor]) -> Result<(Tensor, Vec<usize>), NetError> {
    let b = parts.first().map(|p| p.rows()).unwrap_or(0);
    let widths: Vec<usize> = parts.iter().map(|p| p.row_len()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(b * total);
    for s in 0..b {
        for p in parts {
            if p.rows() != b {
                return Err(NetError::Shape(
                    "concat branches disagree on batch size".into(),
                ));
            }
            data.extend_from_slice(p.row(s));
        }
    }
    Ok((Tensor::new(vec![b, total], data)?, widths))
}
