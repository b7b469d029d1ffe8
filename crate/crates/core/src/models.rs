//! Small feed-forward classifiers with hand-written reverse mode.
//!
//! Activations are flat `Vec<f64>`; image-shaped tensors are stored
//! channel-major (`c, y, x`). All parameters of a network live in one flat
//! vector so the optimizer and the file format treat them uniformly.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Scenario};
use crate::error::{shape_err, Error, Result};
use crate::io::{f64s_from_bytes, split_header, write_f64s};
use crate::linalg::Matrix;
use crate::rng::{stream, StreamRng};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const ACCURACY_GATE: f64 = 0.8;
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride 1, zero padding of `kernel − 1` split as `floor/ceil` before/after,
    /// so the spatial size is preserved.
    Conv2D {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        height: usize,
        width: usize,
    },
    ReLU {
        size: usize,
    },
    /// Non-overlapping `pool × pool` windows; trailing rows/columns that do
    /// not fill a window are dropped.
    MaxPool2D {
        channels: usize,
        height: usize,
        width: usize,
        pool: usize,
    },
    Flatten {
        size: usize,
    },
    Softmax {
        size: usize,
    },
}

impl Layer {
    pub fn input_size(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2D {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
            Layer::ReLU { size } | Layer::Flatten { size } | Layer::Softmax { size } => size,
            Layer::MaxPool2D {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    pub fn output_size(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv2D {
                filters,
                height,
                width,
                ..
            } => filters * height * width,
            Layer::ReLU { size } | Layer::Flatten { size } | Layer::Softmax { size } => size,
            Layer::MaxPool2D {
                channels,
                height,
                width,
                pool,
            } => channels * (height / pool) * (width / pool),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => outputs * inputs + outputs,
            Layer::Conv2D {
                in_channels,
                filters,
                kernel,
                ..
            } => filters * in_channels * kernel * kernel + filters,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2D {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => outputs * inputs,
            Layer::Conv2D {
                in_channels,
                filters,
                kernel,
                ..
            } => filters * in_channels * kernel * kernel,
            _ => 0,
        }
    }
}

/// How the backward pass treats ReLU nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReluRule {
    /// Exact derivative (zero at and below the kink).
    Plain,
    /// Passes signal only where the forward unit was active and the
    /// incoming gradient is positive.
    GuidedBackprop,
    /// Passes only the positive part of the incoming gradient.
    Deconv,
}

/// Scalar function of the logits that gradients and relevances explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTarget {
    Logit(usize),
    /// `logit[class] − logit[1 − class]` for a two-class head.
    Margin(usize),
}

impl OutputTarget {
    fn coefficients(self, n_out: usize) -> Result<Vec<f64>> {
        let mut h = vec![0.0; n_out];
        match self {
            OutputTarget::Logit(c) => {
                if c >= n_out {
                    return Err(Error::InvalidInput(format!("class {c} out of range")));
                }
                h[c] = 1.0;
            }
            OutputTarget::Margin(c) => {
                if n_out != 2 || c > 1 {
                    return Err(Error::InvalidInput(format!(
                        "margin target needs a two-class head and class 0 or 1, got {n_out} outputs, class {c}"
                    )));
                }
                h[c] = 1.0;
                h[1 - c] = -1.0;
            }
        }
        Ok(h)
    }

    pub fn evaluate(self, logits: &[f64]) -> Result<f64> {
        let h = self.coefficients(logits.len())?;
        Ok(h.iter().zip(logits).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations of one forward pass; `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`. The last entry holds probabilities.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn logits(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.acts[self.acts.len() - 1]
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[label]
}

fn lrp_stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

fn pool_argmax(input: &[f64], c: usize, py: usize, px: usize, h: usize, w: usize, pool: usize) -> usize {
    let mut best = c * h * w + py * pool * w + px * pool;
    for dy in 0..pool {
        for dx in 0..pool {
            let idx = c * h * w + (py * pool + dy) * w + px * pool + dx;
            if input[idx] > input[best] {
                best = idx;
            }
        }
    }
    best
}

impl Network {
    /// Builds a network with all parameters zero.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(shape_err(
                    format!("{:?} input {}", pair[1], pair[1].input_size()),
                    format!("{:?} output {}", pair[0], pair[0].output_size()),
                ));
            }
        }
        match layers.last() {
            Some(Layer::Softmax { .. }) => {}
            _ => return Err(Error::InvalidInput("final layer must be Softmax".into())),
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| matches!(l, Layer::Softmax { .. }))
        {
            return Err(Error::InvalidInput("Softmax may only be the final layer".into()));
        }
        for layer in &layers {
            if let Layer::MaxPool2D { pool, .. } | Layer::Conv2D { kernel: pool, .. } = layer {
                if *pool == 0 {
                    return Err(Error::InvalidInput(format!("{layer:?} has zero window")));
                }
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn initialized(layers: Vec<Layer>, rng: &mut StreamRng) -> Result<Self> {
        let mut net = Self::new(layers)?;
        for (l, &off) in net.layers.iter().zip(&net.offsets) {
            let n_w = l.weight_count();
            if n_w == 0 {
                continue;
            }
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for p in &mut net.params[off..off + n_w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err(self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size()
    }

    /// Weight block (row-major `outputs × inputs` for Dense,
    /// `filters × in_channels × k × k` for Conv2D) and bias of layer `i`.
    pub fn layer_params(&self, i: usize) -> (&[f64], &[f64]) {
        let off = self.offsets[i];
        let n_w = self.layers[i].weight_count();
        let n = self.layers[i].param_count();
        (&self.params[off..off + n_w], &self.params[off + n_w..off + n])
    }

    fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.offsets[i];
        let n_w = self.layers[i].weight_count();
        let n = self.layers[i].param_count();
        self.params[off..off + n].split_at_mut(n_w)
    }

    /// Sets the weights and bias of a Dense or Conv2D layer.
    pub fn set_layer_params(&mut self, i: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let (w, b) = self.layer_params_mut(i);
        if w.len() != weights.len() || b.len() != bias.len() {
            return Err(shape_err(
                format!("{} weights + {} biases", w.len(), b.len()),
                format!("{} weights + {} biases", weights.len(), bias.len()),
            ));
        }
        w.copy_from_slice(weights);
        b.copy_from_slice(bias);
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let layer = &self.layers[i];
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = self.layer_params(i);
                (0..outputs)
                    .map(|k| {
                        b[k] + w[k * inputs..(k + 1) * inputs]
                            .iter()
                            .zip(x)
                            .map(|(a, c)| a * c)
                            .sum::<f64>()
                    })
                    .collect()
            }
            Layer::Conv2D {
                in_channels,
                filters,
                kernel,
                height,
                width,
            } => {
                let (w, b) = self.layer_params(i);
                let before = (kernel - 1) / 2;
                let mut out = vec![0.0; filters * height * width];
                for o in 0..filters {
                    for y in 0..height {
                        for xx in 0..width {
                            let mut acc = b[o];
                            for c in 0..in_channels {
                                for dy in 0..kernel {
                                    let iy = (y + dy).wrapping_sub(before);
                                    if iy >= height {
                                        continue;
                                    }
                                    for dx in 0..kernel {
                                        let ix = (xx + dx).wrapping_sub(before);
                                        if ix >= width {
                                            continue;
                                        }
                                        acc += w[((o * in_channels + c) * kernel + dy) * kernel + dx]
                                            * x[c * height * width + iy * width + ix];
                                    }
                                }
                            }
                            out[o * height * width + y * width + xx] = acc;
                        }
                    }
                }
                out
            }
            Layer::ReLU { .. } => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::MaxPool2D {
                channels,
                height,
                width,
                pool,
            } => {
                let (ph, pw) = (height / pool, width / pool);
                let mut out = Vec::with_capacity(channels * ph * pw);
                for c in 0..channels {
                    for py in 0..ph {
                        for px in 0..pw {
                            out.push(x[pool_argmax(x, c, py, px, height, width, pool)]);
                        }
                    }
                }
                out
            }
            Layer::Flatten { .. } => x.to_vec(),
            Layer::Softmax { .. } => softmax(x),
        }
    }

    /// Routes `grad_out` of layer `i` to its input. Parameter gradients are
    /// accumulated into `param_grad` when given.
    fn layer_backward(
        &self,
        i: usize,
        x: &[f64],
        grad_out: &[f64],
        rule: ReluRule,
        param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let layer = &self.layers[i];
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let (w, _) = self.layer_params(i);
                let mut gx = vec![0.0; inputs];
                for k in 0..outputs {
                    let g = grad_out[k];
                    if g == 0.0 {
                        continue;
                    }
                    for (gj, wj) in gx.iter_mut().zip(&w[k * inputs..(k + 1) * inputs]) {
                        *gj += wj * g;
                    }
                }
                if let Some(pg) = param_grad {
                    let off = self.offsets[i];
                    let (gw, gb) = pg[off..off + layer.param_count()].split_at_mut(outputs * inputs);
                    for k in 0..outputs {
                        let g = grad_out[k];
                        gb[k] += g;
                        for (gwj, xj) in gw[k * inputs..(k + 1) * inputs].iter_mut().zip(x) {
                            *gwj += g * xj;
                        }
                    }
                }
                gx
            }
            Layer::Conv2D {
                in_channels,
                filters,
                kernel,
                height,
                width,
            } => {
                let (w, _) = self.layer_params(i);
                let before = (kernel - 1) / 2;
                let plane = height * width;
                let mut gx = vec![0.0; in_channels * plane];
                let mut pg = param_grad.map(|pg| {
                    let off = self.offsets[i];
                    pg[off..off + layer.param_count()].split_at_mut(layer.weight_count())
                });
                for o in 0..filters {
                    for y in 0..height {
                        for xx in 0..width {
                            let g = grad_out[o * plane + y * width + xx];
                            if let Some((_, gb)) = pg.as_mut() {
                                gb[o] += g;
                            }
                            for c in 0..in_channels {
                                for dy in 0..kernel {
                                    let iy = (y + dy).wrapping_sub(before);
                                    if iy >= height {
                                        continue;
                                    }
                                    for dx in 0..kernel {
                                        let ix = (xx + dx).wrapping_sub(before);
                                        if ix >= width {
                                            continue;
                                        }
                                        let wi = ((o * in_channels + c) * kernel + dy) * kernel + dx;
                                        let xi = c * plane + iy * width + ix;
                                        gx[xi] += w[wi] * g;
                                        if let Some((gw, _)) = pg.as_mut() {
                                            gw[wi] += g * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            }
            Layer::ReLU { .. } => x
                .iter()
                .zip(grad_out)
                .map(|(&xi, &g)| match rule {
                    ReluRule::Plain => {
                        if xi > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    }
                    ReluRule::GuidedBackprop => {
                        if xi > 0.0 && g > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    }
                    ReluRule::Deconv => g.max(0.0),
                })
                .collect(),
            Layer::MaxPool2D {
                channels,
                height,
                width,
                pool,
            } => {
                let (ph, pw) = (height / pool, width / pool);
                let mut gx = vec![0.0; channels * height * width];
                for c in 0..channels {
                    for py in 0..ph {
                        for px in 0..pw {
                            gx[pool_argmax(x, c, py, px, height, width, pool)] +=
                                grad_out[(c * ph + py) * pw + px];
                        }
                    }
                }
                gx
            }
            Layer::Flatten { .. } => grad_out.to_vec(),
            Layer::Softmax { .. } => unreachable!("softmax is excluded from backward passes"),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(shape_err(self.input_size(), x.len()));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, &acts[i]);
            acts.push(next);
        }
        Ok(ForwardTrace { acts })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for i in 0..self.layers.len() - 1 {
            a = self.layer_forward(i, &a);
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Class probabilities for every row of `batch`.
    pub fn forward_batch(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_size() {
            return Err(shape_err(self.input_size(), batch.cols()));
        }
        let rows: Vec<Vec<f64>> = (0..batch.rows())
            .into_par_iter()
            .map(|i| self.forward(batch.row(i)))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }

    /// Argmax of the logits; ties resolve to the lower class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.logits(x)?;
        Ok(z
            .iter()
            .enumerate()
            .fold(0, |best, (k, &v)| if v > z[best] { k } else { best }))
    }

    pub fn accuracy(&self, data: &Matrix, labels: &[u8]) -> Result<f64> {
        if data.rows() != labels.len() {
            return Err(shape_err(data.rows(), labels.len()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("accuracy on empty set".into()));
        }
        let correct = (0..data.rows())
            .into_par_iter()
            .map(|i| Ok(usize::from(self.predict(data.row(i))? == labels[i] as usize)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Gradient of `target` with respect to the input under `rule`.
    pub fn grad_input_with_rule(&self, x: &[f64], target: OutputTarget, rule: ReluRule) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        let mut g = target.coefficients(self.output_size())?;
        for i in (0..self.layers.len() - 1).rev() {
            g = self.layer_backward(i, &trace.acts[i], &g, rule, None);
        }
        Ok(g)
    }

    /// Exact gradient of `target` with respect to the input.
    pub fn grad_input(&self, x: &[f64], target: OutputTarget) -> Result<Vec<f64>> {
        self.grad_input_with_rule(x, target, ReluRule::Plain)
    }

    /// Mean cross-entropy over `indices` and, if requested, its parameter gradient.
    fn loss_and_grad(&self, data: &Matrix, labels: &[u8], indices: &[usize], with_grad: bool) -> (f64, Vec<f64>) {
        let n_params = if with_grad { self.params.len() } else { 0 };
        let partials: Vec<(f64, Vec<f64>)> = indices
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grad = vec![0.0; n_params];
                for &s in chunk {
                    let trace = self
                        .forward_trace(data.row(s))
                        .expect("row length checked by caller");
                    let label = labels[s] as usize;
                    loss += cross_entropy(trace.logits(), label);
                    if with_grad {
                        let mut g: Vec<f64> = trace.probabilities().to_vec();
                        g[label] -= 1.0;
                        for i in (0..self.layers.len() - 1).rev() {
                            g = self.layer_backward(i, &trace.acts[i], &g, ReluRule::Plain, Some(&mut grad));
                        }
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n_params];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, grad)
    }

    /// Mean cross-entropy of the rows `indices`.
    pub fn loss(&self, data: &Matrix, labels: &[u8], indices: &[usize]) -> f64 {
        self.loss_and_grad(data, labels, indices, false).0
    }

    /// Epsilon-rule relevance of `target` redistributed onto the input.
    ///
    /// Each Dense/Conv2D layer shares relevance in proportion to
    /// `a_j w_kj / (z_k + ε·sign z_k)` (bias terms absorb their share).
    /// Max-pooling sends relevance to the winning input; ReLU and Flatten
    /// pass it through. A `Margin` target is treated as one extra linear
    /// layer on top of the logits.
    pub fn lrp_epsilon(&self, x: &[f64], target: OutputTarget, eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("LRP epsilon must be > 0, got {eps}")));
        }
        let trace = self.forward_trace(x)?;
        let z = trace.logits();
        let h = target.coefficients(z.len())?;
        let mut r: Vec<f64> = match target {
            OutputTarget::Logit(c) => (0..z.len()).map(|k| if k == c { z[c] } else { 0.0 }).collect(),
            OutputTarget::Margin(_) => {
                let m: f64 = h.iter().zip(z).map(|(a, b)| a * b).sum();
                let share = m / lrp_stabilize(m, eps);
                h.iter().zip(z).map(|(hk, zk)| hk * zk * share).collect()
            }
        };
        for i in (0..self.layers.len() - 1).rev() {
            let a = &trace.acts[i];
            let zi = &trace.acts[i + 1];
            r = match self.layers[i] {
                Layer::Dense { .. } | Layer::Conv2D { .. } => {
                    let s: Vec<f64> = r
                        .iter()
                        .zip(zi)
                        .map(|(rk, &zk)| rk / lrp_stabilize(zk, eps))
                        .collect();
                    let c = self.layer_backward(i, a, &s, ReluRule::Plain, None);
                    a.iter().zip(&c).map(|(aj, cj)| aj * cj).collect()
                }
                Layer::ReLU { .. } | Layer::Flatten { .. } => r,
                Layer::MaxPool2D { .. } => self.layer_backward(i, a, &r, ReluRule::Plain, None),
                Layer::Softmax { .. } => unreachable!("softmax is excluded from relevance passes"),
            };
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "LLR")]
    Llr,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "CNN")]
    Cnn,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Llr, Architecture::Mlp, Architecture::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Llr => "LLR",
            Architecture::Mlp => "MLP",
            Architecture::Cnn => "CNN",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Hidden widths of the MLP; one Dense layer per entry plus the output layer.
    pub mlp_hidden: Vec<usize>,
    pub cnn_conv_layers: usize,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    pub cnn_pool: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            mlp_hidden: vec![64, 64, 64],
            cnn_conv_layers: 4,
            cnn_filters: 4,
            cnn_kernel: 2,
            cnn_pool: 2,
        }
    }

    /// Layer stack for `height × width` single-channel inputs and 2 classes.
    pub fn layers(&self, height: usize, width: usize) -> Result<Vec<Layer>> {
        let d = height * width;
        let mut layers = Vec::new();
        match self.architecture {
            Architecture::Llr => layers.push(Layer::Dense { inputs: d, outputs: 2 }),
            Architecture::Mlp => {
                let mut prev = d;
                for &hdim in &self.mlp_hidden {
                    layers.push(Layer::Dense {
                        inputs: prev,
                        outputs: hdim,
                    });
                    layers.push(Layer::ReLU { size: hdim });
                    prev = hdim;
                }
                layers.push(Layer::Dense {
                    inputs: prev,
                    outputs: 2,
                });
            }
            Architecture::Cnn => {
                if self.cnn_conv_layers == 0 || self.cnn_filters == 0 || self.cnn_pool == 0 {
                    return Err(Error::InvalidInput("CNN needs ≥1 conv layer, filter and pool size".into()));
                }
                let mut channels = 1;
                for _ in 0..self.cnn_conv_layers {
                    layers.push(Layer::Conv2D {
                        in_channels: channels,
                        filters: self.cnn_filters,
                        kernel: self.cnn_kernel,
                        height,
                        width,
                    });
                    channels = self.cnn_filters;
                    layers.push(Layer::ReLU {
                        size: channels * d,
                    });
                }
                let pool = Layer::MaxPool2D {
                    channels,
                    height,
                    width,
                    pool: self.cnn_pool,
                };
                let flat = pool.output_size();
                layers.push(pool);
                layers.push(Layer::Flatten { size: flat });
                layers.push(Layer::Dense {
                    inputs: flat,
                    outputs: 2,
                });
            }
        }
        layers.push(Layer::Softmax { size: 2 });
        Ok(layers)
    }

    pub fn build(&self, height: usize, width: usize, seed: u64) -> Result<Network> {
        let mut rng = stream(seed, "model-init", 0);
        Network::initialized(self.layers(height, width)?, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.004,
            batch_size: None,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let learning_rate = match scenario {
            Scenario::Rigid => 0.0004,
            _ => 0.004,
        };
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidInput("batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub network: Network,
    pub log: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_accuracy: f64,
}

impl TrainedModel {
    pub fn passes_gate(&self) -> bool {
        self.test_accuracy >= ACCURACY_GATE
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains with Adam on the train split, keeping the weights of the epoch with
/// the lowest validation loss, and reports accuracy on the test split.
pub fn train(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let splits = &dataset.splits;
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::InvalidInput("train/val/test splits must all be nonempty".into()));
    }
    let (h, w) = (dataset.config.height, dataset.config.width);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let data = dataset.pixel_matrix(&all);
    let labels = dataset.labels(&all);
    if !data.is_finite() {
        return Err(Error::InvalidInput("dataset has non-finite pixels".into()));
    }

    let mut net = spec.build(h, w, config.seed)?;
    let mut adam = Adam::new(net.params.len());
    let mut order = splits.train.clone();
    let batch = config.batch_size.unwrap_or(order.len()).min(order.len());
    let mut best_params = net.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(config.epochs);

    for e in 1..=config.epochs {
        if config.batch_size.is_some() {
            order.shuffle(&mut stream(config.seed, "train-shuffle", e as u64));
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = net.loss_and_grad(&data, &labels, chunk, true);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch: e, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut net.params, &grad, config);
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = net.loss(&data, &labels, &splits.val);
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: e,
                loss: val_loss,
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = e;
            best_params.copy_from_slice(&net.params);
        }
        log.push(EpochRecord {
            epoch: e,
            train_loss,
            val_loss,
        });
    }
    net.params = best_params;
    let test_accuracy = net.accuracy(&dataset.pixel_matrix(&splits.test), &dataset.labels(&splits.test))?;
    log::info!(
        "{} trained: best epoch {best_epoch}, val loss {best_val:.5}, test accuracy {test_accuracy:.4}",
        spec.architecture
    );
    Ok(TrainedModel {
        spec: spec.clone(),
        config: config.clone(),
        network: net,
        log,
        best_epoch,
        best_val_loss: best_val,
        test_accuracy,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    spec: ModelSpec,
    config: TrainConfig,
    layers: Vec<Layer>,
    best_epoch: usize,
    best_val_loss: f64,
    test_accuracy: f64,
    n_params: usize,
}

impl TrainedModel {
    /// JSON header line followed by little-endian f64 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            config: self.config.clone(),
            layers: self.network.layers.clone(),
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            test_accuracy: self.test_accuracy,
            n_params: self.network.params.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        write_f64s(&mut out, &self.network.params).expect("vec write");
        out
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }

    fn from_parts(bytes: &[u8], log_csv: &str) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let header: ModelHeader = serde_json::from_value(header)?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                header.format_version
            )));
        }
        let params = f64s_from_bytes(payload)?;
        if params.len() != header.n_params {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                header.n_params,
                params.len()
            )));
        }
        let mut network = Network::new(header.layers)?;
        network.set_params(params)?;
        let mut log = Vec::new();
        for (lineno, line) in log_csv.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let parse_err = || Error::Format(format!("bad training log line {}: {line:?}", lineno + 1));
            if fields.len() != 3 {
                return Err(parse_err());
            }
            log.push(EpochRecord {
                epoch: fields[0].parse().map_err(|_| parse_err())?,
                train_loss: fields[1].parse().map_err(|_| parse_err())?,
                val_loss: fields[2].parse().map_err(|_| parse_err())?,
            });
        }
        Ok(Self {
            spec: header.spec,
            config: header.config,
            network,
            log,
            best_epoch: header.best_epoch,
            best_val_loss: header.best_val_loss,
            test_accuracy: header.test_accuracy,
        })
    }

    /// Writes `<stem>.model` and `<stem>.train_log.csv`; returns the model path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}.model"));
        fs::write(&path, self.to_bytes())?;
        fs::write(dir.join(format!("{stem}.train_log.csv")), self.log_csv())?;
        Ok(path)
    }

    pub fn load(model_path: &Path) -> Result<Self> {
        let bytes = fs::read(model_path)?;
        let log_path = model_path.with_extension("train_log.csv");
        let log = fs::read_to_string(&log_path)?;
        Self::from_parts(&bytes, &log)
    }
}
