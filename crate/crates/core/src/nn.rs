//! Small dense networks with hand-written reverse mode.
//!
//! Parameters of a [`DenseNet`] live in one flat vector, layer by layer,
//! each layer as a row-major `output × input` weight matrix followed by its
//! bias vector. Gradients use the same layout, so the optimizer and the
//! checkpoint format work on plain slices.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DdclError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Activations recorded by [`DenseNet::forward`]; consumed by `backward`.
#[derive(Debug)]
pub struct GradTape {
    /// Input to each layer; the last entry is the network output.
    activations: Vec<Vec<f64>>,
    param_count: usize,
}

/// Result of a backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn shape_error(expected: usize, actual: usize) -> DdclError {
    DdclError::ShapeMismatch { expected, actual }
}

impl DenseNet {
    /// All-zero network with the given layer shapes.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(shape_error(pair[0].output, pair[1].input));
            }
        }
        let count = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self {
            layers,
            params: vec![0.0; count],
        })
    }

    /// Multilayer perceptron with tanh hidden layers and an identity output.
    ///
    /// Weights are Glorot-uniform; the output layer is further scaled by
    /// `output_gain`. Biases start at zero.
    pub fn mlp<R: Rng>(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers: Vec<LayerSpec> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input: w[0],
                output: w[1],
                activation: if i + 2 == widths.len() {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        let mut net = Self::zeros(layers).expect("widths compose");
        let mut offset = 0;
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter().enumerate() {
            let limit = (6.0 / (layer.input + layer.output) as f64).sqrt();
            let gain = if i == last { output_gain } else { 1.0 };
            for w in &mut net.params[offset..offset + layer.output * layer.input] {
                *w = gain * rng.gen_range(-limit..limit);
            }
            offset += layer.param_count();
        }
        net
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Replaces all parameters; rejects a length mismatch or non-finite values.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_error(self.params.len(), params.len()));
        }
        if let Some((index, &value)) = params.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DdclError::NonFinite { index, value });
        }
        self.params = params;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer_forward(&self, layer: &LayerSpec, offset: usize, x: &[f64], out: &mut Vec<f64>) {
        let weights = &self.params[offset..offset + layer.output * layer.input];
        let biases = &self.params[offset + layer.output * layer.input..offset + layer.param_count()];
        out.clear();
        out.extend(weights.chunks_exact(layer.input).zip(biases).map(|(row, b)| {
            let pre = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            match layer.activation {
                Activation::Tanh => pre.tanh(),
                Activation::Identity => pre,
            }
        }));
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(shape_error(self.input_width(), x.len()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        for layer in &self.layers {
            self.layer_forward(layer, offset, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            offset += layer.param_count();
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, GradTape)> {
        if x.len() != self.input_width() {
            return Err(shape_error(self.input_width(), x.len()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.output);
            self.layer_forward(layer, offset, activations.last().unwrap(), &mut out);
            activations.push(out);
            offset += layer.param_count();
        }
        let output = activations.last().unwrap().clone();
        Ok((
            output,
            GradTape {
                activations,
                param_count: self.params.len(),
            },
        ))
    }

    /// Reverse pass; returns fresh parameter and input gradients.
    pub fn backward(&self, tape: GradTape, output_grad: &[f64]) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(tape, output_grad, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Reverse pass that adds parameter gradients into `param_grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_into(
        &self,
        tape: GradTape,
        output_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.param_count != self.params.len() || tape.activations.len() != self.layers.len() + 1
        {
            return Err(DdclError::Precondition(
                "tape was recorded on a different network".into(),
            ));
        }
        if param_grads.len() != self.params.len() {
            return Err(shape_error(self.params.len(), param_grads.len()));
        }
        if output_grad.len() != self.output_width() {
            return Err(shape_error(self.output_width(), output_grad.len()));
        }
        let mut grad = output_grad.to_vec();
        let mut offset = self.params.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let x = &tape.activations[i];
            let y = &tape.activations[i + 1];
            if layer.activation == Activation::Tanh {
                for (g, yv) in grad.iter_mut().zip(y) {
                    *g *= 1.0 - yv * yv;
                }
            }
            let n_w = layer.output * layer.input;
            let (gw, gb) = param_grads[offset..offset + layer.param_count()].split_at_mut(n_w);
            for ((g_row, gbias), &g) in gw.chunks_exact_mut(layer.input).zip(gb.iter_mut()).zip(&grad)
            {
                *gbias += g;
                for (gw, xv) in g_row.iter_mut().zip(x) {
                    *gw += g * xv;
                }
            }
            let weights = &self.params[offset..offset + n_w];
            let mut input_grad = vec![0.0; layer.input];
            for (row, &g) in weights.chunks_exact(layer.input).zip(&grad) {
                for (ig, w) in input_grad.iter_mut().zip(row) {
                    *ig += g * w;
                }
            }
            grad = input_grad;
        }
        Ok(grad)
    }

    /// Writes `<stem>.bin` (little-endian f64 parameters) and `<stem>.json`
    /// (layer shapes).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let manifest = CheckpointManifest {
            layers: self.layers.clone(),
            param_count: self.params.len(),
        };
        fs::write(
            stem.with_extension("json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        let bytes: Vec<u8> = self.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        fs::write(stem.with_extension("bin"), bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() != manifest.param_count * 8 {
            return Err(shape_error(manifest.param_count * 8, bytes.len()));
        }
        let mut net = Self::zeros(manifest.layers)?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_params(params)?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    layers: Vec<LayerSpec>,
    param_count: usize,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Adam hyperparameters. Defaults: `β1 = 0.9`, `β2 = 0.999`, `ε = 1e−8`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(shape_error(params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(shape_error(params.len(), state.m.len()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Rescales `grads` so their L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
