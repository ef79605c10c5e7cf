//! Dense layers, softmax/cross-entropy, Adam, and a finite-difference
//! gradient checker. Everything is `f64`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::None => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu if z > 0.0 => 1.0,
            Activation::Relu => 0.0,
            Activation::None => 1.0,
        }
    }
}

/// Flat access to trainable parameters in a fixed order. Gradient vectors
/// use the same order.
pub trait Parameterized {
    fn param_count(&self) -> usize;
    fn param_mut(&mut self, index: usize) -> &mut f64;
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64));
}

/// Fully connected layer, `activation(W x + b)`. Weights are row-major,
/// `outputs x inputs`. Parameter order: weights, then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform on `[-1/sqrt(inputs), 1/sqrt(inputs)]` for weights and bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::Shape {
                expected: self.inputs,
                got: x.len(),
                context: "dense layer input",
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.inputs.max(1))
            .take(self.outputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect())
    }

    pub fn activate(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.activation.apply(v)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activate(&self.pre_activation(x)?))
    }

    /// Backpropagates `grad_out` (dL/d output) through the layer evaluated at
    /// input `x` with pre-activation `z`. Parameter gradients are added into
    /// `grads` (length [`Parameterized::param_count`]); returns dL/dx.
    pub fn backward(&self, x: &[f64], z: &[f64], grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.param_count());
        let (gw, gb) = grads.split_at_mut(self.weights.len());
        let mut grad_in = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            let delta = grad_out[o] * self.activation.derivative(z[o]);
            if delta == 0.0 {
                continue;
            }
            gb[o] += delta;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                gw[row + i] += delta * x[i];
                grad_in[i] += delta * self.weights[row + i];
            }
        }
        grad_in
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

impl Parameterized for DenseLayer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn param_mut(&mut self, index: usize) -> &mut f64 {
        let nw = self.weights.len();
        if index < nw {
            &mut self.weights[index]
        } else {
            &mut self.bias[index - nw]
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(f);
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Shape {
            expected: 1,
            got: 0,
            context: "softmax input",
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {z:?}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

pub fn cross_entropy(prob: &[f64], label: usize) -> Result<f64> {
    let p = prob.get(label).ok_or(Error::Index {
        index: label,
        len: prob.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// dL/dz of cross-entropy composed with softmax: `prob - onehot(label)`.
pub fn softmax_cross_entropy_grad(prob: &[f64], label: usize) -> Vec<f64> {
    prob.iter()
        .enumerate()
        .map(|(i, p)| if i == label { p - 1.0 } else { *p })
        .collect()
}

/// A plain stack of dense layers ending in softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes = [in, hidden.., classes]`; hidden layers use `hidden_activation`,
    /// the output layer none.
    pub fn init(sizes: &[usize], hidden_activation: Activation, rng: &mut impl Rng) -> Self {
        let last = sizes.len().saturating_sub(2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::None
                } else {
                    hidden_activation
                };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        softmax(&h)
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        cross_entropy(&self.predict(x)?, label)
    }

    /// Loss at `(x, label)` and its gradient, added into `grads`.
    pub fn backward(&self, x: &[f64], label: usize, grads: &mut [f64]) -> Result<f64> {
        let mut inputs = vec![x.to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.pre_activation(inputs.last().unwrap())?;
            inputs.push(layer.activate(&z));
            pres.push(z);
        }
        let prob = softmax(inputs.last().unwrap())?;
        let loss = cross_entropy(&prob, label)?;
        let mut grad = softmax_cross_entropy_grad(&prob, label);
        let mut end = grads.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let start = end - layer.param_count();
            grad = layer.backward(&inputs[i], &pres[i], &grad, &mut grads[start..end]);
            end = start;
        }
        Ok(loss)
    }
}

impl Parameterized for Mlp {
    fn param_count(&self) -> usize {
        self.layers.iter().map(Parameterized::param_count).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let n = layer.param_count();
            if index < n {
                return layer.param_mut(index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        AdamState {
            config,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut dyn Parameterized, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() || params.param_count() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: grads.len(),
                context: "adam gradient",
            });
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_params_mut(&mut |p| {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            i += 1;
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
}

/// `|a - n| / max(|a|, |n|)`, and 0 when both are 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares `analytic` against central differences of `loss` with step `h`.
/// Parameters are restored before returning.
pub fn gradient_check<M: Parameterized>(
    model: &mut M,
    analytic: &[f64],
    h: f64,
    loss: impl Fn(&M) -> f64,
) -> GradCheck {
    assert_eq!(analytic.len(), model.param_count());
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
    };
    for i in 0..analytic.len() {
        let orig = *model.param_mut(i);
        *model.param_mut(i) = orig + h;
        let up = loss(model);
        *model.param_mut(i) = orig - h;
        let down = loss(model);
        *model.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > worst.max_relative_error {
            worst = GradCheck {
                max_relative_error: err,
                worst_index: i,
            };
        }
    }
    worst
}
