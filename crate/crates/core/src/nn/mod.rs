//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Shared by the correlation encoder (frozen predictors, projector,
//! autoencoder) and the plan rewriter's models. Parameters are 64-bit.

mod persist;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use persist::{load_net, save_net};
pub use train::{gradient_check, train, train_anchored, GradientCheck, Optimizer, OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    MeanSquaredError,
    /// Softmax over the outputs followed by cross-entropy against a
    /// probability (usually one-hot) target.
    CrossEntropy,
}

impl Loss {
    /// Per-sample loss and its gradient with respect to the network output.
    pub fn value_and_grad(self, output: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(output.len(), target.len());
        match self {
            Loss::MeanSquaredError => {
                let d = output.len() as f64;
                let mut loss = 0.0;
                let grad = output
                    .iter()
                    .zip(target)
                    .map(|(y, t)| {
                        let e = y - t;
                        loss += e * e;
                        2.0 * e / d
                    })
                    .collect();
                (loss / d, grad)
            }
            Loss::CrossEntropy => {
                let p = softmax(output);
                let loss = -p
                    .iter()
                    .zip(target)
                    .filter(|(_, t)| **t > 0.0)
                    .map(|(p, t)| t * p.max(1e-300).ln())
                    .sum::<f64>();
                let tsum: f64 = target.iter().sum();
                let grad = p.iter().zip(target).map(|(p, t)| p * tsum - t).collect();
                (loss, grad)
            }
        }
    }

    pub fn value(self, output: &[f64], target: &[f64]) -> f64 {
        self.value_and_grad(output, target).0
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn forward_into(&self, x: &[f64], pre: &mut Vec<f64>, post: &mut Vec<f64>) {
        pre.clear();
        post.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = self.bias[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            pre.push(z);
            post.push(self.activation.apply(z));
        }
    }
}

/// Per-layer pre- and post-activations from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map_or(&self.input, |v| v)
    }
}

/// Parameter gradients shaped like a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|v| v.iter_mut().for_each(|g| *g *= s));
    }

    /// Adds `lambda · (θ − θ₀)` for an L2 pull toward `anchor`'s parameters.
    pub fn add_anchor_penalty(&mut self, net: &FeedForwardNet, anchor: &FeedForwardNet, lambda: f64) {
        for (li, (l, a)) in net.layers.iter().zip(&anchor.layers).enumerate() {
            for ((g, w), w0) in self.weights[li].iter_mut().zip(&l.weights).zip(&a.weights) {
                *g += lambda * (w - w0);
            }
            for ((g, b), b0) in self.bias[li].iter_mut().zip(&l.bias).zip(&a.bias) {
                *g += lambda * (b - b0);
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardNet {
    layers: Vec<Dense>,
    frozen: bool,
}

impl FeedForwardNet {
    /// Layer sizes `[in, h1, …, out]`; hidden layers use `hidden`, the last
    /// layer uses `output`. Weights uniform in `±√(6/(fan_in+fan_out))`,
    /// biases zero.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 2 == sizes.len() { output } else { hidden },
                }
            })
            .collect();
        Ok(FeedForwardNet { layers, frozen: false })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::ShapeMismatch {
                    expected: l.inputs * l.outputs,
                    got: l.weights.len(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::ShapeMismatch {
                    expected: w[0].outputs,
                    got: w[1].inputs,
                });
            }
        }
        Ok(FeedForwardNet { layers, frozen: false })
    }

    /// Single linear layer computing the identity map.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        FeedForwardNet {
            layers: vec![Dense {
                inputs: n,
                outputs: n,
                weights,
                bias: vec![0.0; n],
                activation: Activation::Identity,
            }],
            frozen: false,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters in layer order (weights then bias per layer).
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch {
                expected: self.input_size(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for l in &self.layers {
            l.forward_into(&cur, &mut pre, &mut post);
            std::mem::swap(&mut cur, &mut post);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch {
                expected: self.input_size(),
                got: input.len(),
            });
        }
        let mut trace = Trace {
            input: input.to_vec(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        for l in &self.layers {
            let x = trace.post.last().unwrap_or(&trace.input);
            let (mut pre, mut post) = (Vec::new(), Vec::new());
            l.forward_into(x, &mut pre, &mut post);
            trace.pre.push(pre);
            trace.post.push(post);
        }
        Ok(trace)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input. Works on frozen networks too; freezing only
    /// blocks parameter updates.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let mut delta: Vec<f64> = grad_output.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            for (d, z) in delta.iter_mut().zip(&trace.pre[li]) {
                *d *= l.activation.derivative(*z);
            }
            let x = if li == 0 { &trace.input } else { &trace.post[li - 1] };
            let gw = &mut grads.weights[li];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads.bias[li][o] += d;
                let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let mut next = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            delta = next;
        }
        delta
    }

    fn apply_update(&mut self, mut f: impl FnMut(usize, f64) -> f64, grads: &Gradients) {
        let mut i = 0;
        for (li, l) in self.layers.iter_mut().enumerate() {
            for (w, g) in l.weights.iter_mut().zip(&grads.weights[li]) {
                *w -= f(i, *g);
                i += 1;
            }
            for (b, g) in l.bias.iter_mut().zip(&grads.bias[li]) {
                *b -= f(i, *g);
                i += 1;
            }
        }
    }
}

/// Per-feature z-score normalization fitted on training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}
