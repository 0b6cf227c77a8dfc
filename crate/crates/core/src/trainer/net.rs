//! Small dense networks with hand-written backpropagation.
//!
//! The last layer emits logits; softmax and cross-entropy live in
//! [`softmax_cross_entropy`]. Forward and backward passes work on row-major
//! batches and can be run over any contiguous slice of layers, which is what
//! lets the device and server each own part of a network.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer: `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Values kept from the forward pass of one layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    pre_activation: Matrix,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let scale = (2.0 / inputs as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dense {
            weights: Matrix {
                rows: outputs,
                cols: inputs,
                data,
            },
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }

    fn pre_activation(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols, self.inputs(), "layer input width mismatch");
        let mut z = Matrix::zeros(x.rows, self.outputs());
        for r in 0..x.rows {
            let xr = x.row(r);
            for o in 0..self.outputs() {
                let w = self.weights.row(o);
                let mut acc = self.bias[o];
                for i in 0..xr.len() {
                    acc += w[i] * xr[i];
                }
                z.data[r * z.cols + o] = acc;
            }
        }
        z
    }

    fn activate(&self, mut z: Matrix) -> Matrix {
        if self.activation == Activation::Relu {
            for v in &mut z.data {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        z
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerCache) {
        let z = self.pre_activation(x);
        let y = self.activate(z.clone());
        (
            y,
            LayerCache {
                input: x.clone(),
                pre_activation: z,
            },
        )
    }

    /// Forward pass without keeping anything for backpropagation.
    pub fn infer(&self, x: &Matrix) -> Matrix {
        self.activate(self.pre_activation(x))
    }

    /// Gradient of the parameters and of the layer input, given the gradient
    /// of the layer output.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Matrix) -> (DenseGrad, Matrix) {
        let mut dz = grad_out.clone();
        if self.activation == Activation::Relu {
            for (g, z) in dz.data.iter_mut().zip(&cache.pre_activation.data) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let x = &cache.input;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut dw = vec![0.0; n_in * n_out];
        let mut db = vec![0.0; n_out];
        let mut dx = Matrix::zeros(x.rows, n_in);
        for r in 0..x.rows {
            let xr = x.row(r);
            for o in 0..n_out {
                let g = dz.get(r, o);
                db[o] += g;
                let w = self.weights.row(o);
                for i in 0..n_in {
                    dw[o * n_in + i] += g * xr[i];
                    dx.data[r * n_in + i] += g * w[i];
                }
            }
        }
        (DenseGrad { weights: dw, bias: db }, dx)
    }

    pub fn apply(&mut self, grad: &DenseGrad, lr: f64) {
        for (w, g) in self.weights.data.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.data.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Runs `x` through `layers`, returning the output and per-layer caches.
pub fn forward_stack(layers: &[Dense], x: &Matrix) -> (Matrix, Vec<LayerCache>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for layer in layers {
        let (y, cache) = layer.forward(&h);
        caches.push(cache);
        h = y;
    }
    (h, caches)
}

/// Backpropagates `grad_out` through `layers`; returns per-layer parameter
/// gradients (in layer order) and the gradient at the stack input.
pub fn backward_stack(layers: &[Dense], caches: &[LayerCache], grad_out: &Matrix) -> (Vec<DenseGrad>, Matrix) {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out.clone();
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (grad, dx) = layer.backward(cache, &g);
        grads.push(grad);
        g = dx;
    }
    grads.reverse();
    (grads, g)
}

/// Mean softmax cross-entropy of `logits` against `labels`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    assert_eq!(logits.rows, labels.len());
    let n = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for r in 0..logits.rows {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[labels[r]];
        for c in 0..logits.cols {
            let p = (row[c] - log_sum).exp();
            let target = if c == labels[r] { 1.0 } else { 0.0 };
            grad.data[r * logits.cols + c] = (p - target) / n;
        }
    }
    (loss / n, grad)
}

pub fn predict(layers: &[Dense], x: &Matrix) -> Vec<usize> {
    let mut logits = x.clone();
    for layer in layers {
        logits = layer.infer(&logits);
    }
    (0..logits.rows)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// A whole network: hidden relu layers and a linear logit layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroNet {
    pub layers: Vec<Dense>,
}

impl MicroNet {
    /// `widths = [input, hidden.., classes]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                Dense::new(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        MicroNet { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// One plain SGD step on the whole network; returns the batch loss.
    pub fn sgd_step(&mut self, x: &Matrix, labels: &[usize], lr: f64) -> f64 {
        let (logits, caches) = forward_stack(&self.layers, x);
        let (loss, grad) = softmax_cross_entropy(&logits, labels);
        let (grads, _) = backward_stack(&self.layers, &caches, &grad);
        for (layer, g) in self.layers.iter_mut().zip(&grads) {
            layer.apply(g, lr);
        }
        loss
    }
}
