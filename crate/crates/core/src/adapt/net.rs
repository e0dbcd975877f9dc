use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AdaptError;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Parameter block with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Tensor {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Tensor { value, grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn check_finite(&self, what: &'static str) -> Result<(), AdaptError> {
        if self.value.iter().chain(self.grad.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AdaptError::NonFinite(what))
        }
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Fully connected stack. Every hidden layer applies a leaky rectifier; the
/// last layer does so only when `activate_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub sizes: Vec<usize>,
    /// `(out, in)` per layer.
    pub weights: Vec<Tensor>,
    /// `(1, out)` per layer.
    pub biases: Vec<Tensor>,
    pub activate_output: bool,
}

/// Per-layer inputs and pre-activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub sizes: Vec<usize>,
    pub activate_output: bool,
    pub parameters: Vec<f64>,
}

impl MlpNet {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activate_output: bool, rng: &mut R) -> Result<Self, AdaptError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(AdaptError::BadShape(format!("layer sizes {sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            weights.push(Tensor::new(Array2::from_shape_fn((w[1], w[0]), |_| normal.sample(rng))));
            biases.push(Tensor::new(Array2::zeros((1, w[1]))));
        }
        Ok(MlpNet { sizes: sizes.to_vec(), weights, biases, activate_output })
    }

    pub fn zeros(sizes: &[usize], activate_output: bool) -> Result<Self, AdaptError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(AdaptError::BadShape(format!("layer sizes {sizes:?}")));
        }
        let weights = sizes.windows(2).map(|w| Tensor::new(Array2::zeros((w[1], w[0])))).collect();
        let biases = sizes.windows(2).map(|w| Tensor::new(Array2::zeros((1, w[1])))).collect();
        Ok(MlpNet { sizes: sizes.to_vec(), weights, biases, activate_output })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn parameter_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers() || self.activate_output
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), AdaptError> {
        if x.ncols() != self.input_dim() {
            return Err(AdaptError::Shape { expected: self.input_dim(), found: x.ncols() });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, AdaptError> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace, AdaptError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut h = x.to_owned();
        for l in 0..self.layers() {
            let z = h.dot(&self.weights[l].value.t()) + &self.biases[l].value;
            let next = if self.activated(l) { z.mapv(leaky) } else { z.clone() };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(AdaptError::NonFinite("forward output"));
        }
        Ok(Trace { inputs, pre, output: h })
    }

    /// Backpropagates `grad_y` through the pass recorded in `trace` and
    /// returns the gradient with respect to the input. Parameter gradients
    /// are added to the accumulators only when `accumulate` is set.
    pub fn backward(&mut self, trace: &Trace, grad_y: ArrayView2<f64>, accumulate: bool) -> Result<Array2<f64>, AdaptError> {
        if grad_y.dim() != trace.output.dim() {
            return Err(AdaptError::Shape { expected: trace.output.ncols(), found: grad_y.ncols() });
        }
        let mut g = grad_y.to_owned();
        for l in (0..self.layers()).rev() {
            if self.activated(l) {
                g.zip_mut_with(&trace.pre[l], |gi, &z| *gi *= leaky_grad(z));
            }
            if accumulate {
                self.weights[l].grad += &g.t().dot(&trace.inputs[l]);
                self.biases[l].grad += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            g = g.dot(&self.weights[l].value);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(AdaptError::NonFinite("backward gradient"));
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(Tensor::zero_grad);
    }

    /// Weights then bias of each layer, row-major.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.value.iter());
            out.extend(b.value.iter());
        }
        out
    }

    pub fn gradients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.grad.iter());
            out.extend(b.grad.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), AdaptError> {
        if params.len() != self.parameter_count() {
            return Err(AdaptError::Shape { expected: self.parameter_count(), found: params.len() });
        }
        let mut it = params.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.value.iter_mut().chain(b.value.iter_mut()).for_each(|v| *v = *it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Bit-level hash of all parameters.
    pub fn checksum(&self) -> u64 {
        self.parameters().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3))
    }

    /// Applies `step(param, grad)` to every parameter in `parameters()` order.
    pub fn update(&mut self, mut step: impl FnMut(usize, &mut f64, f64)) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for tensor in [w, b] {
                for (p, g) in tensor.value.iter_mut().zip(tensor.grad.iter()) {
                    step(k, p, *g);
                    k += 1;
                }
            }
        }
    }

    pub fn checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint { sizes: self.sizes.clone(), activate_output: self.activate_output, parameters: self.parameters() }
    }

    pub fn from_checkpoint(c: &NetCheckpoint) -> Result<Self, AdaptError> {
        let mut net = Self::zeros(&c.sizes, c.activate_output)?;
        net.set_parameters(&c.parameters)?;
        if c.parameters.iter().any(|v| !v.is_finite()) {
            return Err(AdaptError::NonFinite("checkpoint"));
        }
        Ok(net)
    }
}

/// Row-wise gather.
pub fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

pub fn column(values: &[f64]) -> Array2<f64> {
    Array1::from(values.to_vec()).insert_axis(Axis(1))
}
