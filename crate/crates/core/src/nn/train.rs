use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeedForwardNet, Gradients, Loss};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::MeanSquaredError,
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &FeedForwardNet) -> Self {
        let n = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => net.num_params(),
        };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Applies one update from gradients already averaged over the batch.
    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &Gradients) -> Result<()> {
        if net.is_frozen() {
            return Err(Error::FrozenNetwork);
        }
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => net.apply_update(|_, g| lr * g, grads),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let (c1, c2) = (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t));
                let (m, v) = (&mut self.m, &mut self.v);
                net.apply_update(
                    |i, g| {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps)
                    },
                    grads,
                );
            }
        }
        Ok(())
    }
}

/// Mini-batch training with a seeded shuffle per epoch. Returns the mean
/// per-sample training loss of each epoch.
pub fn train(
    net: &mut FeedForwardNet,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    train_anchored(net, inputs, targets, config, None)
}

/// [`train`] with an optional L2 pull of strength `lambda` toward the
/// parameters of an anchor network of the same shape.
pub fn train_anchored(
    net: &mut FeedForwardNet,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
    anchor: Option<(&FeedForwardNet, f64)>,
) -> Result<Vec<f64>> {
    if let Some((a, _)) = anchor {
        if a.layer_sizes() != net.layer_sizes() {
            return Err(Error::InvalidConfig("anchor network has a different shape".into()));
        }
    }
    if net.is_frozen() {
        return Err(Error::FrozenNetwork);
    }
    config.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (x, y) in inputs.iter().zip(targets) {
        if x.len() != net.input_size() {
            return Err(Error::ShapeMismatch {
                expected: net.input_size(),
                got: x.len(),
            });
        }
        if y.len() != net.output_size() {
            return Err(Error::ShapeMismatch {
                expected: net.output_size(),
                got: y.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, net);
    let mut grads = Gradients::zeros_like(net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let trace = net.forward_trace(&inputs[i])?;
                let (loss, g) = config.loss.value_and_grad(trace.output(), &targets[i]);
                total += loss;
                net.backward(&trace, &g, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some((a, lambda)) = anchor {
                grads.add_anchor_penalty(net, a, lambda);
            }
            opt.step(net, &grads)?;
        }
        curve.push(total / inputs.len() as f64);
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub within_tolerance: bool,
}

const FD_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients compare absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Compares backpropagated gradients of the single-sample loss with central
/// finite differences over every parameter.
pub fn gradient_check(
    net: &FeedForwardNet,
    input: &[f64],
    target: &[f64],
    loss: Loss,
    tolerance: f64,
) -> Result<GradientCheck> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let trace = net.forward_trace(input)?;
    let (_, g) = loss.value_and_grad(trace.output(), target);
    let mut grads = Gradients::zeros_like(net);
    net.backward(&trace, &g, &mut grads);
    let analytic = grads.flat();

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + FD_STEP;
        let plus = loss.value(&probe.forward(input)?, target);
        *probe.param_mut(i) = orig - FD_STEP;
        let minus = loss.value(&probe.forward(input)?, target);
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        within_tolerance: worst < tolerance,
    })
}
