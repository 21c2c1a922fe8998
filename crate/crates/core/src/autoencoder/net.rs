//! Layer table, parameters, batched forward pass and reverse-mode gradients.

use rand::Rng;
use sha2::{Digest, Sha256};

use super::conv::{self, conv_out_len, conv_transpose_out_len, KERNEL_VOL};
use super::AutoencoderError;
use crate::seed;

pub const ENCODER_CHANNELS: [usize; 4] = [1, 16, 32, 64];
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3d,
    ConvTranspose3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// One kernel-3, stride-2, padding-1 layer followed by its activation and,
/// optionally, batch normalization (in that order).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Extra trailing row per axis for transposed layers whose mirrored
    /// encoder input had even length.
    pub output_padding: [usize; 3],
}

impl LayerSpec {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PADDING: usize = 1;

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * KERNEL_VOL
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3], AutoencoderError> {
        match self.kind {
            LayerKind::Conv3d => {
                let mut out = [0; 3];
                for a in 0..3 {
                    out[a] = conv_out_len(input[a]).filter(|&v| v >= 1).ok_or(AutoencoderError::Shape(format!(
                        "axis {a} of length {} collapses below 1",
                        input[a]
                    )))?;
                }
                Ok(out)
            }
            LayerKind::ConvTranspose3d => {
                if input.contains(&0) {
                    return Err(AutoencoderError::Shape("zero-length axis".into()));
                }
                Ok(std::array::from_fn(|a| conv_transpose_out_len(input[a], self.output_padding[a])))
            }
        }
    }
}

/// Spatial dims at each encoder level: input, after layer 1, 2 and 3.
pub fn level_dims(input: [usize; 3]) -> Result<[[usize; 3]; 4], AutoencoderError> {
    if input.contains(&0) {
        return Err(AutoencoderError::Shape(format!("input dims {input:?} contain zero")));
    }
    let mut levels = [input; 4];
    for l in 1..4 {
        levels[l] = levels[l - 1].map(|d| conv_out_len(d).expect("d >= 1"));
    }
    Ok(levels)
}

/// The six-layer layer table for a given input size.
pub fn architecture(input: [usize; 3]) -> Result<Vec<LayerSpec>, AutoencoderError> {
    let levels = level_dims(input)?;
    let mut layers = Vec::with_capacity(6);
    for l in 0..3 {
        layers.push(LayerSpec {
            kind: LayerKind::Conv3d,
            in_channels: ENCODER_CHANNELS[l],
            out_channels: ENCODER_CHANNELS[l + 1],
            activation: Activation::Relu,
            batch_norm: true,
            output_padding: [0; 3],
        });
    }
    for l in (0..3).rev() {
        let small = levels[l + 1];
        let big = levels[l];
        let output_padding = std::array::from_fn(|a| big[a] - conv_transpose_out_len(small[a], 0));
        let last = l == 0;
        layers.push(LayerSpec {
            kind: LayerKind::ConvTranspose3d,
            in_channels: ENCODER_CHANNELS[l + 1],
            out_channels: ENCODER_CHANNELS[l],
            activation: if last { Activation::Sigmoid } else { Activation::Relu },
            batch_norm: !last,
            output_padding,
        });
    }
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl LayerParams {
    fn trainable_len(&self) -> usize {
        self.weights.len() + self.bias.len() + self.bn.as_ref().map_or(0, |b| 2 * b.gamma.len())
    }
}

/// Autoencoder parameters: three encoder and three decoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AEParams {
    pub input_dims: [usize; 3],
    pub layers: Vec<LayerParams>,
}

impl AEParams {
    /// Weights and biases uniform in `±1/√fan_in`, batch norm at identity.
    pub fn init(input_dims: [usize; 3], seed: u64) -> Result<Self, AutoencoderError> {
        let specs = architecture(input_dims)?;
        let mut rng = seed::rng(seed::derive_str(seed, "ae-init"));
        let layers = specs
            .into_iter()
            .map(|spec| {
                let bound = 1.0 / ((spec.in_channels * KERNEL_VOL) as f64).sqrt();
                let weights = (0..spec.weight_len()).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..spec.out_channels).map(|_| rng.random_range(-bound..bound)).collect();
                let bn = spec.batch_norm.then(|| BatchNorm::new(spec.out_channels));
                LayerParams { spec, weights, bias, bn }
            })
            .collect();
        Ok(Self { input_dims, layers })
    }

    /// Validates the layer table against the fixed architecture.
    pub fn from_layers(input_dims: [usize; 3], layers: Vec<LayerParams>) -> Result<Self, AutoencoderError> {
        let specs = architecture(input_dims)?;
        if layers.len() != specs.len() {
            return Err(AutoencoderError::Shape(format!("expected {} layers, got {}", specs.len(), layers.len())));
        }
        for (i, (l, s)) in layers.iter().zip(&specs).enumerate() {
            if l.spec != *s {
                return Err(AutoencoderError::Shape(format!("layer {i} spec {:?} differs from {:?}", l.spec, s)));
            }
            if l.weights.len() != s.weight_len() || l.bias.len() != s.out_channels {
                return Err(AutoencoderError::Shape(format!("layer {i} parameter lengths mismatch")));
            }
            if l.bn.is_some() != s.batch_norm {
                return Err(AutoencoderError::Shape(format!("layer {i} batch norm presence mismatch")));
            }
            if let Some(bn) = &l.bn {
                let c = s.out_channels;
                if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var].iter().any(|v| v.len() != c) {
                    return Err(AutoencoderError::Shape(format!("layer {i} batch norm lengths mismatch")));
                }
            }
        }
        Ok(Self { input_dims, layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Number of trainable scalars (weights, biases, batch-norm scale/shift).
    pub fn trainable_len(&self) -> usize {
        self.layers.iter().map(LayerParams::trainable_len).sum()
    }

    /// Trainable parameters flattened as, per layer: weights, bias, gamma, beta.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
            if let Some(bn) = &l.bn {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.trainable_len());
        let mut off = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&flat[off..off + n]);
            off += n;
        };
        for l in &mut self.layers {
            take(&mut l.weights);
            take(&mut l.bias);
            if let Some(bn) = &mut l.bn {
                take(&mut bn.gamma);
                take(&mut bn.beta);
            }
        }
    }

    /// SHA-256 of all parameters including running statistics.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                h.update(v.to_le_bytes());
            }
            if let Some(bn) = &l.bn {
                for v in bn.gamma.iter().chain(&bn.beta).chain(&bn.running_mean).chain(&bn.running_var) {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer tensors kept for the backward pass. Each buffer holds the whole
/// batch, sample-major.
#[derive(Debug, Clone)]
struct LayerCache {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    /// Layer input.
    input: Vec<f64>,
    /// Activation output (before batch norm).
    act: Vec<f64>,
    /// Normalized activations, when batch norm is present.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
}

/// Forward results for a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    mode: Mode,
    batch: usize,
    layers: Vec<LayerCache>,
    /// Sigmoid outputs, sample-major.
    pub reconstruction: Vec<f64>,
    /// Outputs of the three encoder layers after activation and batch norm.
    pub encoder_outputs: [Vec<f64>; 3],
    pub encoder_dims: [[usize; 3]; 3],
}

impl ForwardPass {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn voxels_per_sample(&self) -> usize {
        self.reconstruction.len() / self.batch
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.voxels_per_sample();
        &self.reconstruction[i * n..(i + 1) * n]
    }
}

fn vol(d: [usize; 3]) -> usize {
    d[0] * d[1] * d[2]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs a batch of volumes (each `input_dims`, f64) through the network.
pub fn forward_batch(params: &AEParams, inputs: &[&[f64]], mode: Mode) -> Result<ForwardPass, AutoencoderError> {
    let batch = inputs.len();
    if batch == 0 {
        return Err(AutoencoderError::Shape("empty batch".into()));
    }
    let n_in = vol(params.input_dims);
    if let Some(bad) = inputs.iter().find(|x| x.len() != n_in) {
        return Err(AutoencoderError::Shape(format!(
            "input has {} voxels, network expects {:?}",
            bad.len(),
            params.input_dims
        )));
    }
    let mut current: Vec<f64> = inputs.iter().flat_map(|x| x.iter().copied()).collect();
    let mut dims = params.input_dims;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut encoder_outputs: [Vec<f64>; 3] = Default::default();
    let mut encoder_dims = [[0usize; 3]; 3];

    for (li, layer) in params.layers.iter().enumerate() {
        let spec = layer.spec;
        let out_dims = spec.output_dims(dims)?;
        let (iv, ov) = (vol(dims), vol(out_dims));
        let (ic, oc) = (spec.in_channels, spec.out_channels);
        let mut z = vec![0.0; batch * oc * ov];
        for b in 0..batch {
            let x = &current[b * ic * iv..(b + 1) * ic * iv];
            let out = &mut z[b * oc * ov..(b + 1) * oc * ov];
            for (c, chunk) in out.chunks_mut(ov).enumerate() {
                chunk.fill(layer.bias[c]);
            }
            match spec.kind {
                LayerKind::Conv3d => conv::gather(x, ic, dims, &layer.weights, out, oc, out_dims),
                LayerKind::ConvTranspose3d => conv::scatter(x, ic, dims, &layer.weights, out, oc, out_dims),
            }
        }
        let act: Vec<f64> = match spec.activation {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        };
        let mut cache = LayerCache {
            in_dims: dims,
            out_dims,
            input: current,
            act,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var_unbiased: Vec::new(),
        };
        let output = if let Some(bn) = &layer.bn {
            let count = (batch * ov) as f64;
            let mut mean = vec![0.0; oc];
            let mut var = vec![0.0; oc];
            match mode {
                Mode::Train => {
                    for c in 0..oc {
                        let mut s = 0.0;
                        for b in 0..batch {
                            s += cache.act[(b * oc + c) * ov..(b * oc + c + 1) * ov].iter().sum::<f64>();
                        }
                        mean[c] = s / count;
                        let mut ss = 0.0;
                        for b in 0..batch {
                            ss += cache.act[(b * oc + c) * ov..(b * oc + c + 1) * ov]
                                .iter()
                                .map(|&v| (v - mean[c]) * (v - mean[c]))
                                .sum::<f64>();
                        }
                        var[c] = ss / count;
                    }
                    cache.batch_var_unbiased =
                        var.iter().map(|&v| if count > 1.0 { v * count / (count - 1.0) } else { v }).collect();
                    cache.batch_mean = mean.clone();
                }
                Mode::Eval => {
                    mean.copy_from_slice(&bn.running_mean);
                    var.copy_from_slice(&bn.running_var);
                }
            }
            cache.inv_std = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            cache.xhat = vec![0.0; cache.act.len()];
            let mut y = vec![0.0; cache.act.len()];
            for b in 0..batch {
                for c in 0..oc {
                    let r = (b * oc + c) * ov..(b * oc + c + 1) * ov;
                    for i in r {
                        let xh = (cache.act[i] - mean[c]) * cache.inv_std[c];
                        cache.xhat[i] = xh;
                        y[i] = bn.gamma[c] * xh + bn.beta[c];
                    }
                }
            }
            y
        } else {
            cache.act.clone()
        };
        if li < 3 {
            encoder_outputs[li] = output.clone();
            encoder_dims[li] = out_dims;
        }
        dims = out_dims;
        current = output;
        caches.push(cache);
    }
    if dims != params.input_dims {
        return Err(AutoencoderError::Shape(format!(
            "decoder produced {dims:?}, expected {:?}",
            params.input_dims
        )));
    }
    Ok(ForwardPass { mode, batch, layers: caches, reconstruction: current, encoder_outputs, encoder_dims })
}

/// Gradient of a scalar loss with respect to every trainable parameter,
/// flattened in [`AEParams::to_flat`] order, given `d loss / d reconstruction`.
pub fn backward(params: &AEParams, pass: &ForwardPass, grad_output: &[f64]) -> Vec<f64> {
    assert_eq!(grad_output.len(), pass.reconstruction.len());
    let batch = pass.batch;
    let mut grads_per_layer: Vec<Vec<f64>> = Vec::with_capacity(params.layers.len());
    let mut g = grad_output.to_vec();
    for (layer, cache) in params.layers.iter().zip(&pass.layers).rev() {
        let spec = layer.spec;
        let (ic, oc) = (spec.in_channels, spec.out_channels);
        let (iv, ov) = (vol(cache.in_dims), vol(cache.out_dims));
        let mut gamma_grad = Vec::new();
        let mut beta_grad = Vec::new();
        // g: d/d(layer output). Convert to d/d(activation output).
        let g_act = if let Some(bn) = &layer.bn {
            gamma_grad = vec![0.0; oc];
            beta_grad = vec![0.0; oc];
            let mut ga = vec![0.0; g.len()];
            let count = (batch * ov) as f64;
            for c in 0..oc {
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for b in 0..batch {
                    for i in (b * oc + c) * ov..(b * oc + c + 1) * ov {
                        sum_g += g[i];
                        sum_gx += g[i] * cache.xhat[i];
                    }
                }
                gamma_grad[c] = sum_gx;
                beta_grad[c] = sum_g;
                let gm = bn.gamma[c];
                let is = cache.inv_std[c];
                match pass.mode {
                    Mode::Train => {
                        // dx = γ·inv_std/N · (N·g − Σg − x̂·Σ(g·x̂))
                        for b in 0..batch {
                            for i in (b * oc + c) * ov..(b * oc + c + 1) * ov {
                                ga[i] = gm * is / count * (count * g[i] - sum_g - cache.xhat[i] * sum_gx);
                            }
                        }
                    }
                    Mode::Eval => {
                        for b in 0..batch {
                            for i in (b * oc + c) * ov..(b * oc + c + 1) * ov {
                                ga[i] = gm * is * g[i];
                            }
                        }
                    }
                }
            }
            ga
        } else {
            g
        };
        // through the activation to the pre-activation z
        let gz: Vec<f64> = match spec.activation {
            Activation::Relu => g_act.iter().zip(&cache.act).map(|(&gv, &a)| if a > 0.0 { gv } else { 0.0 }).collect(),
            Activation::Sigmoid => g_act.iter().zip(&cache.act).map(|(&gv, &a)| gv * a * (1.0 - a)).collect(),
        };
        let mut bias_grad = vec![0.0; oc];
        for b in 0..batch {
            for (c, bg) in bias_grad.iter_mut().enumerate() {
                *bg += gz[(b * oc + c) * ov..(b * oc + c + 1) * ov].iter().sum::<f64>();
            }
        }
        let mut w_grad = vec![0.0; spec.weight_len()];
        let mut g_in = vec![0.0; batch * ic * iv];
        for b in 0..batch {
            let x = &cache.input[b * ic * iv..(b + 1) * ic * iv];
            let gzb = &gz[b * oc * ov..(b + 1) * oc * ov];
            let gi = &mut g_in[b * ic * iv..(b + 1) * ic * iv];
            match spec.kind {
                LayerKind::Conv3d => {
                    conv::weight_grad(gzb, oc, cache.out_dims, x, ic, cache.in_dims, &mut w_grad);
                    conv::scatter(gzb, oc, cache.out_dims, &layer.weights, gi, ic, cache.in_dims);
                }
                LayerKind::ConvTranspose3d => {
                    conv::weight_grad(x, ic, cache.in_dims, gzb, oc, cache.out_dims, &mut w_grad);
                    conv::gather(gzb, oc, cache.out_dims, &layer.weights, gi, ic, cache.in_dims);
                }
            }
        }
        let mut flat = w_grad;
        flat.extend_from_slice(&bias_grad);
        if layer.bn.is_some() {
            flat.extend_from_slice(&gamma_grad);
            flat.extend_from_slice(&beta_grad);
        }
        grads_per_layer.push(flat);
        g = g_in;
    }
    grads_per_layer.into_iter().rev().flatten().collect()
}

/// Folds the batch statistics of a train-mode pass into the running
/// statistics (momentum [`BN_MOMENTUM`]).
pub fn update_running_stats(params: &mut AEParams, pass: &ForwardPass) {
    if pass.mode != Mode::Train {
        return;
    }
    for (layer, cache) in params.layers.iter_mut().zip(&pass.layers) {
        if let Some(bn) = &mut layer.bn {
            for c in 0..bn.running_mean.len() {
                bn.running_mean[c] = (1.0 - BN_MOMENTUM) * bn.running_mean[c] + BN_MOMENTUM * cache.batch_mean[c];
                bn.running_var[c] =
                    (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * cache.batch_var_unbiased[c];
            }
        }
    }
}
