//! Dense layers with hand-written backpropagation and an Adam optimizer.
//!
//! Parameters are stored as `f32` (the on-disk precision); all arithmetic
//! runs in `f64`. Training keeps an `f64` master copy inside [`Trainer`]
//! and writes rounded values back into the layers after every step.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(pre);
                s * (1.0 + pre * (1.0 - s))
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Silu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Silu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Forward values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros(layer: &Dense) -> Self {
        Self { weights: vec![0.0; layer.weights.len()], bias: vec![0.0; layer.bias.len()] }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| *g = 0.0);
        self.bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

impl Dense {
    /// Uniform `±1/sqrt(inputs)` initialization.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(inputs.max(1) as f64);
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound) as f32).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound) as f32).collect();
        Self { inputs, outputs, activation, weights, bias }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward_into(&self, x: &[f64], cache: &mut DenseCache) {
        debug_assert_eq!(x.len(), self.inputs);
        cache.pre.resize(self.outputs, 0.0);
        cache.out.resize(self.outputs, 0.0);
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o] as f64;
            for (w, xi) in row.iter().zip(x) {
                acc += *w as f64 * xi;
            }
            cache.pre[o] = acc;
            cache.out[o] = self.activation.apply(acc);
        }
    }

    pub fn forward(&self, x: &[f64]) -> DenseCache {
        let mut cache = DenseCache::default();
        self.forward_into(x, &mut cache);
        cache
    }

    /// Backpropagates `grad_out` (d loss / d output). Accumulates parameter
    /// gradients when `grads` is given and adds d loss / d input into
    /// `grad_in` when given.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &DenseCache,
        grad_out: &[f64],
        grads: Option<&mut DenseGrad>,
        grad_in: Option<&mut [f64]>,
    ) {
        let mut delta = vec![0.0; self.outputs];
        for o in 0..self.outputs {
            delta[o] = grad_out[o] * self.activation.derivative(cache.pre[o], cache.out[o]);
        }
        if let Some(g) = grads {
            for o in 0..self.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * self.inputs..(o + 1) * self.inputs];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
        }
        if let Some(gi) = grad_in {
            for o in 0..self.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (g, w) in gi.iter_mut().zip(row) {
                    *g += d * *w as f64;
                }
            }
        }
    }
}

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Standard defaults with the given learning rate.
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
}

/// Adam over a fixed list of layers, with `f64` master weights.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: AdamConfig,
    master: Vec<(Vec<f64>, Vec<f64>)>,
    state: Vec<(AdamState, AdamState)>,
}

impl Trainer {
    pub fn new(cfg: AdamConfig, layers: &[&Dense]) -> Self {
        let master = layers
            .iter()
            .map(|l| (l.weights.iter().map(|&w| w as f64).collect(), l.bias.iter().map(|&b| b as f64).collect()))
            .collect();
        let state = layers
            .iter()
            .map(|l| (AdamState::new(l.weights.len()), AdamState::new(l.bias.len())))
            .collect();
        Self { cfg, master, state }
    }

    /// One update from gradients already averaged over the batch.
    pub fn step(&mut self, layers: &mut [&mut Dense], grads: &[DenseGrad]) {
        for (((layer, grad), (mw, mb)), (sw, sb)) in
            layers.iter_mut().zip(grads).zip(self.master.iter_mut()).zip(self.state.iter_mut())
        {
            sw.step(&self.cfg, mw, &grad.weights);
            sb.step(&self.cfg, mb, &grad.bias);
            for (dst, src) in layer.weights.iter_mut().zip(mw.iter()) {
                *dst = *src as f32;
            }
            for (dst, src) in layer.bias.iter_mut().zip(mb.iter()) {
                *dst = *src as f32;
            }
        }
    }
}

/// Fisher–Yates shuffle of `0..n`.
pub fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
