//! Dense fully-connected network with masked weights and batch normalization
//! on hidden-layer inputs.
//!
//! Layer `l` maps its input `h` (fan_in features) to preactivations
//! `z = W h̃ + b`, where `h̃ = γ ⊙ (h − μ) / √(σ² + ε) + β` when layer `l` has
//! batch normalization and `h̃ = h` otherwise. Hidden layers apply ReLU; the
//! last layer produces logits for a softmax cross-entropy loss.

mod checkpoint;
mod train;

pub use checkpoint::Checkpoint;
pub use train::{train, BatchSchedule, TrainConfig, TrainOutcome};

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::pruning::Mask;
use crate::seed;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
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
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input, hidden..., output widths.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// One flag per hidden layer: normalize that layer's inputs.
    pub batch_norm: Vec<bool>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(layer_sizes: Vec<usize>, batch_norm: bool, seed: u64) -> Self {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self {
            layer_sizes,
            activation: Activation::Relu,
            batch_norm: vec![batch_norm; hidden],
            seed,
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.layer_sizes.len().saturating_sub(2)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 layer sizes (input, hidden, output), got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!("layer {pos} has zero width")));
        }
        if self.batch_norm.len() != self.n_hidden() {
            return Err(Error::InvalidConfig(format!(
                "batch_norm has {} flags for {} hidden layers",
                self.batch_norm.len(),
                self.n_hidden()
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let input = self.layer_sizes[0];
        if input != data.feature_dim() {
            return Err(Error::InvalidConfig(format!(
                "input size {input} != channels x N_p^2 = {}",
                data.feature_dim()
            )));
        }
        let output = *self.layer_sizes.last().expect("validated");
        if output != data.n_classes() as usize {
            return Err(Error::InvalidConfig(format!(
                "output size {output} != class count {}",
                data.n_classes()
            )));
        }
        Ok(())
    }

    /// Stable hash of the architecture and init seed.
    pub fn hash(&self) -> u64 {
        seed::hash_u64(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// fan_out x fan_in
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub activation: Activation,
}

impl Parameters {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.weight.rows(), l.weight.cols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Zero every masked-out weight in place.
    pub fn apply_mask(&mut self, mask: &Mask) -> Result<()> {
        mask.check_shapes(&self.shapes())?;
        for (layer, lm) in self.layers.iter_mut().zip(mask.layers()) {
            for (w, &keep) in layer.weight.as_mut_slice().iter_mut().zip(lm.bits()) {
                if !keep {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn masked(&self, mask: &Mask) -> Result<Parameters> {
        let mut out = self.clone();
        out.apply_mask(mask)?;
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} features but layer {} expects {}",
                    pair[0].fan_out(),
                    l + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::Shape(format!("layer {l} bias length mismatch")));
            }
            if let Some(bn) = &layer.bn {
                let w = layer.fan_in();
                if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                    .iter()
                    .any(|v| v.len() != w)
                {
                    return Err(Error::Shape(format!(
                        "layer {l} batch-norm vectors mismatch fan_in"
                    )));
                }
                if bn.running_var.iter().any(|&v| v < 0.0) {
                    return Err(Error::Shape(format!("layer {l} negative running variance")));
                }
            }
        }
        Ok(())
    }
}

/// Weights i.i.d. uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases,
/// identity batch norm.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let mut layers = Vec::with_capacity(config.n_layers());
    for (l, dims) in config.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (dims[0], dims[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        let bn = config
            .batch_norm
            .get(l)
            .copied()
            .unwrap_or(false)
            .then(|| BatchNorm::identity(fan_in));
        layers.push(Layer {
            weight: Matrix::from_vec(fan_out, fan_in, data)?,
            bias: vec![0.0; fan_out],
            bn,
        });
    }
    Ok(Parameters {
        layers,
        activation: config.activation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    pub normalized: Matrix,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Per layer: the (normalized) input actually multiplied by the weights.
    pub inputs: Vec<Matrix>,
    pub norm: Vec<Option<NormCache>>,
    /// Per layer: samples x fan_out, the last entry being the logits.
    pub preactivations: Vec<Matrix>,
    /// Per hidden layer: post-nonlinearity values.
    pub activations: Vec<Matrix>,
}

impl ForwardPass {
    pub fn logits(&self) -> &Matrix {
        self.preactivations.last().expect("at least one layer")
    }
}

/// Forward pass with the mask applied to the weights.
pub fn forward(params: &Parameters, mask: &Mask, batch: &Matrix, mode: Mode) -> Result<ForwardPass> {
    params.validate()?;
    let effective = params.masked(mask)?;
    forward_unmasked(&effective, batch, mode)
}

/// Forward pass trusting that masked weights are already zero.
pub(crate) fn forward_unmasked(params: &Parameters, batch: &Matrix, mode: Mode) -> Result<ForwardPass> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, network expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    if batch.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut norm = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut acts = Vec::with_capacity(n_layers - 1);

    let mut h = batch.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let (h_tilde, cache) = match &layer.bn {
            Some(bn) => {
                let (out, cache) = normalize(&h, bn, mode);
                (out, cache)
            }
            None => (h, None),
        };
        let z = affine(&h_tilde, layer);
        if l + 1 < n_layers {
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = params.activation.apply(*v);
            }
            h = a.clone();
            acts.push(a);
        } else {
            h = Matrix::zeros(0, 0);
        }
        inputs.push(h_tilde);
        norm.push(cache);
        pre.push(z);
    }
    Ok(ForwardPass {
        inputs,
        norm,
        preactivations: pre,
        activations: acts,
    })
}

fn normalize(h: &Matrix, bn: &BatchNorm, mode: Mode) -> (Matrix, Option<NormCache>) {
    let (n, width) = (h.rows(), h.cols());
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; width];
            for r in 0..n {
                axpy(1.0, h.row(r), &mut mean);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; width];
            for r in 0..n {
                for ((v, &x), &m) in var.iter_mut().zip(h.row(r)).zip(&mean) {
                    let d = x - m;
                    *v += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut normalized = Matrix::zeros(n, width);
    let mut out = Matrix::zeros(n, width);
    for r in 0..n {
        let src = h.row(r);
        let xhat = normalized.row_mut(r);
        for j in 0..width {
            xhat[j] = (src[j] - mean[j]) * inv_std[j];
        }
        let dst = out.row_mut(r);
        for j in 0..width {
            dst[j] = bn.gamma[j] * xhat[j] + bn.beta[j];
        }
    }
    let cache = match mode {
        Mode::Train => Some(NormCache {
            normalized,
            mean,
            var,
            inv_std,
        }),
        Mode::Eval => None,
    };
    (out, cache)
}

fn affine(input: &Matrix, layer: &Layer) -> Matrix {
    let (n, fan_out) = (input.rows(), layer.fan_out());
    let mut z = Matrix::zeros(n, fan_out);
    for r in 0..n {
        let x = input.row(r);
        let zr = z.row_mut(r);
        for (o, zo) in zr.iter_mut().enumerate() {
            *zo = dot(layer.weight.row(o), x) + layer.bias[o];
        }
    }
    z
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weight: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
    pub gamma: Vec<Option<Vec<f64>>>,
    pub beta: Vec<Option<Vec<f64>>>,
}

/// Mean softmax cross-entropy over the batch, and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("label count does not match batch".into()));
    }
    let (n, k) = (logits.rows(), logits.cols());
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for r in 0..n {
        let row = logits.row(r);
        let y = labels[r] as usize;
        if y >= k {
            return Err(Error::Shape(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let g = grad.row_mut(r);
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        loss += sum.ln() + max - row[y];
        for gi in g.iter_mut() {
            *gi /= sum * n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Backpropagate `d_logits` through a train-mode forward pass. Weight
/// gradients are not masked here.
pub fn backward(params: &Parameters, pass: &ForwardPass, d_logits: &Matrix) -> Gradients {
    let n_layers = params.layers.len();
    let n = d_logits.rows();
    let mut g_w = vec![Matrix::zeros(0, 0); n_layers];
    let mut g_b = vec![Vec::new(); n_layers];
    let mut g_gamma = vec![None; n_layers];
    let mut g_beta = vec![None; n_layers];

    let mut dz = d_logits.clone();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let input = &pass.inputs[l];
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());

        let mut dw = Matrix::zeros(fan_out, fan_in);
        let mut db = vec![0.0; fan_out];
        for r in 0..n {
            let dzr = dz.row(r);
            let x = input.row(r);
            for o in 0..fan_out {
                let d = dzr[o];
                if d != 0.0 {
                    axpy(d, x, dw.row_mut(o));
                }
                db[o] += d;
            }
        }
        g_w[l] = dw;
        g_b[l] = db;

        let needs_input_grad = l > 0 || layer.bn.is_some();
        if !needs_input_grad {
            break;
        }
        let mut dh = Matrix::zeros(n, fan_in);
        for r in 0..n {
            let dzr = dz.row(r);
            let dhr = dh.row_mut(r);
            for o in 0..fan_out {
                let d = dzr[o];
                if d != 0.0 {
                    axpy(d, layer.weight.row(o), dhr);
                }
            }
        }

        if let (Some(bn), Some(cache)) = (&layer.bn, &pass.norm[l]) {
            let xhat = &cache.normalized;
            let mut dgamma = vec![0.0; fan_in];
            let mut dbeta = vec![0.0; fan_in];
            for r in 0..n {
                let dhr = dh.row(r);
                let xr = xhat.row(r);
                for j in 0..fan_in {
                    dgamma[j] += dhr[j] * xr[j];
                    dbeta[j] += dhr[j];
                }
            }
            if l > 0 {
                // d xhat = dh * gamma; d h = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                let mut sum_dx = vec![0.0; fan_in];
                let mut sum_dx_x = vec![0.0; fan_in];
                for j in 0..fan_in {
                    sum_dx[j] = dbeta[j] * bn.gamma[j];
                    sum_dx_x[j] = dgamma[j] * bn.gamma[j];
                }
                let nf = n as f64;
                for r in 0..n {
                    let xr = xhat.row(r).to_vec();
                    let dhr = dh.row_mut(r);
                    for j in 0..fan_in {
                        let dxhat = dhr[j] * bn.gamma[j];
                        dhr[j] = cache.inv_std[j] / nf
                            * (nf * dxhat - sum_dx[j] - xr[j] * sum_dx_x[j]);
                    }
                }
            }
            g_gamma[l] = Some(dgamma);
            g_beta[l] = Some(dbeta);
        }

        if l == 0 {
            break;
        }
        let prev_pre = &pass.preactivations[l - 1];
        for (d, &p) in dh.as_mut_slice().iter_mut().zip(prev_pre.as_slice()) {
            *d *= params.activation.derivative(p);
        }
        dz = dh;
    }

    Gradients {
        weight: g_w,
        bias: g_b,
        gamma: g_gamma,
        beta: g_beta,
    }
}

/// Inputs (after normalization, eval mode) and preactivations of one hidden
/// layer over a sample matrix.
#[derive(Debug, Clone)]
pub struct LayerProbe {
    /// samples x fan_in
    pub inputs: Matrix,
    /// units x samples
    pub preactivations: Matrix,
}

const PROBE_CHUNK: usize = 4096;

/// Eval-mode probe of hidden layer `layer` (1-based).
pub fn probe_layer(params: &Parameters, mask: &Mask, samples: &Matrix, layer: usize) -> Result<LayerProbe> {
    if layer == 0 || layer >= params.n_layers() {
        return Err(Error::Shape(format!(
            "hidden layer index {layer} outside 1..={}",
            params.n_layers() - 1
        )));
    }
    params.validate()?;
    let effective = params.masked(mask)?;
    let idx = layer - 1;
    let fan_in = effective.layers[idx].fan_in();
    let fan_out = effective.layers[idx].fan_out();
    let n = samples.rows();
    let mut inputs = Matrix::zeros(n, fan_in);
    let mut pre = Matrix::zeros(fan_out, n);
    let mut start = 0;
    while start < n {
        let end = (start + PROBE_CHUNK).min(n);
        let chunk = samples.select_rows(&(start..end).collect::<Vec<_>>());
        let pass = forward_unmasked(&effective, &chunk, Mode::Eval)?;
        for r in 0..end - start {
            inputs.row_mut(start + r).copy_from_slice(pass.inputs[idx].row(r));
            let z = pass.preactivations[idx].row(r);
            for (u, &v) in z.iter().enumerate() {
                pre.set(u, start + r, v);
            }
        }
        start = end;
    }
    Ok(LayerProbe {
        inputs,
        preactivations: pre,
    })
}

/// Preactivations of hidden layer `layer` (1-based), units x samples.
pub fn preactivations(params: &Parameters, mask: &Mask, data: &Dataset, layer: usize) -> Result<Matrix> {
    Ok(probe_layer(params, mask, data.images(), layer)?.preactivations)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(params: &Parameters, mask: &Mask, data: &Dataset) -> Result<f64> {
    let effective = params.masked(mask)?;
    let x = data.images();
    let mut correct = 0usize;
    let mut start = 0;
    while start < x.rows() {
        let end = (start + PROBE_CHUNK).min(x.rows());
        let chunk = x.select_rows(&(start..end).collect::<Vec<_>>());
        let pass = forward_unmasked(&effective, &chunk, Mode::Eval)?;
        let logits = pass.logits();
        for r in 0..end - start {
            let row = logits.row(r);
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            if pred as u32 == data.labels()[start + r] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / x.rows() as f64)
}

#[cfg(test)]
mod tests;
