//! Parameterised layers over the raw tape ops.
//!
//! Each layer owns its parameters as plain `Vec<f64>` storage and interns
//! them onto the active [`Tape`] by name at forward time, so one parameter
//! used several times in a graph accumulates a single gradient. Layer names
//! are assigned at construction and must be unique within a model; they
//! double as checkpoint keys.
//!
//! Initialisation is Kaiming-uniform: weights drawn from
//! `U(-b, b)` with `b = sqrt(6 / fan_in)`, where `fan_in` counts input
//! channels times receptive field. Biases start at zero, batch norm gain at
//! one and shift at zero.

use crate::error::Result;
use crate::tensor::rng::SplitMix64;
use crate::tensor::{BnStats, Mode, Tape, TensorId};

/// Owned parameter storage for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    fn kaiming(shape: Vec<usize>, fan_in: usize, rng: &mut SplitMix64) -> ParamTensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        ParamTensor { shape, data }
    }

    fn zeros(shape: Vec<usize>) -> ParamTensor {
        let n: usize = shape.iter().product();
        ParamTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    fn ones(shape: Vec<usize>) -> ParamTensor {
        let n: usize = shape.iter().product();
        ParamTensor {
            shape,
            data: vec![1.0; n],
        }
    }
}

/// Visitor over named parameter storage.
///
/// The callback receives `(name, shape, data, trainable)`. Non-trainable
/// entries (batch norm running statistics) are included so checkpoints
/// capture them, but optimisers must skip them.
pub trait VisitParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool));
}

/// Fully connected layer computing `x @ w + b` with `w` stored as
/// `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    pub w: ParamTensor,
    pub b: Option<ParamTensor>,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut SplitMix64) -> Self {
        Linear {
            name: name.to_string(),
            w: ParamTensor::kaiming(vec![inputs, outputs], inputs, rng),
            b: bias.then(|| ParamTensor::zeros(vec![1, outputs])),
        }
    }

    /// Applies the layer to `x` of shape `[.., n, in]`.
    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let w = tape.param(&format!("{}.w", self.name), &self.w.data, &self.w.shape)?;
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = &self.b {
            let yshape = tape.shape(y).to_vec();
            let mut bshape = vec![1; yshape.len()];
            *bshape.last_mut().unwrap() = b.shape[1];
            let mut bid = tape.param(&format!("{}.b", self.name), &b.data, &b.shape)?;
            bid = tape.reshape(bid, &bshape)?;
            for axis in 0..yshape.len() - 1 {
                bid = tape.repeat(bid, axis, yshape[axis])?;
            }
            y = tape.add(y, bid)?;
        }
        Ok(y)
    }
}

impl VisitParams for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        let name = format!("{}.w", self.name);
        f(&name, &self.w.shape, &mut self.w.data, true);
        if let Some(b) = &mut self.b {
            let name = format!("{}.b", self.name);
            f(&name, &b.shape, &mut b.data, true);
        }
    }
}

/// 1-d convolution layer, weight `[out, in, k]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    name: String,
    pub w: ParamTensor,
    pub b: ParamTensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Conv1d {
            name: name.to_string(),
            w: ParamTensor::kaiming(vec![out_ch, in_ch, kernel], in_ch * kernel, rng),
            b: ParamTensor::zeros(vec![out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let w = tape.param(&format!("{}.w", self.name), &self.w.data, &self.w.shape)?;
        let b = tape.param(&format!("{}.b", self.name), &self.b.data, &self.b.shape)?;
        tape.conv1d(x, w, b, self.stride, self.pad)
    }
}

impl VisitParams for Conv1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        let name = format!("{}.w", self.name);
        f(&name, &self.w.shape, &mut self.w.data, true);
        let name = format!("{}.b", self.name);
        f(&name, &self.b.shape, &mut self.b.data, true);
    }
}

/// Bias-free transposed 1-d convolution, weight `[in, out, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    name: String,
    pub w: ParamTensor,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        ConvTranspose1d {
            name: name.to_string(),
            w: ParamTensor::kaiming(vec![in_ch, out_ch, kernel], in_ch * kernel, rng),
            stride,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let w = tape.param(&format!("{}.w", self.name), &self.w.data, &self.w.shape)?;
        tape.conv1d_transpose(x, w, self.stride)
    }
}

impl VisitParams for ConvTranspose1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        let name = format!("{}.w", self.name);
        f(&name, &self.w.shape, &mut self.w.data, true);
    }
}

/// Batch normalisation over `[B, C, L]` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    name: String,
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub stats: BnStats,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm1d {
            name: name.to_string(),
            gamma: ParamTensor::ones(vec![channels]),
            beta: ParamTensor::zeros(vec![channels]),
            stats: BnStats::new(channels),
            momentum,
            eps,
        }
    }

    /// Train mode also advances the running statistics.
    pub fn forward(&mut self, tape: &mut Tape, x: TensorId, mode: Mode) -> Result<TensorId> {
        let gamma = tape.param(
            &format!("{}.gamma", self.name),
            &self.gamma.data,
            &self.gamma.shape,
        )?;
        let beta = tape.param(
            &format!("{}.beta", self.name),
            &self.beta.data,
            &self.beta.shape,
        )?;
        tape.batchnorm1d(x, gamma, beta, &mut self.stats, mode, self.momentum, self.eps)
    }
}

impl VisitParams for BatchNorm1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        let c = self.gamma.shape.clone();
        let name = format!("{}.gamma", self.name);
        f(&name, &self.gamma.shape, &mut self.gamma.data, true);
        let name = format!("{}.beta", self.name);
        f(&name, &self.beta.shape, &mut self.beta.data, true);
        let name = format!("{}.running_mean", self.name);
        f(&name, &c, &mut self.stats.running_mean, false);
        let name = format!("{}.running_var", self.name);
        f(&name, &c, &mut self.stats.running_var, false);
    }
}
