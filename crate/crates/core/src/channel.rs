//! The stochastic quantization channel.
//!
//! The sender perturbs each component with shared dither `ε`, transmits the
//! bin index `m = ⌊(z + ε)/δ⌋`, and the receiver rebuilds
//! `ẑ = (m + 1/2)·δ − ε` from its own copy of `ε`. The reconstruction error
//! `e = ẑ − z` is uniform on a width-`δ` interval and independent of `z`,
//! so downstream the channel behaves like additive noise and its backward
//! rule is the identity.

use serde::{Deserialize, Serialize};

use crate::codec::{self, MAX_MAGNITUDE};
use crate::error::{DdclError, Result};
use crate::rng::{self, NoiseKey};

/// A finite real-valued signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DdclError::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = DdclError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// What crosses the channel: the bin indices plus their bit accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMessage {
    pub ints: Vec<i64>,
    /// `Σ log2(2|m| + 1)`.
    pub ideal_bits: f64,
    /// Length of the concatenated prefix codewords.
    pub encoded_bits: u64,
}

impl DiscreteMessage {
    /// Builds a message and fills both bit counts.
    pub fn from_ints(ints: Vec<i64>) -> Result<Self> {
        let mut encoded_bits = 0u64;
        for &m in &ints {
            encoded_bits += u64::from(codec::encoded_len(m)?);
        }
        let ideal_bits = ints.iter().map(|&m| codec::ideal_bit_length(m)).sum();
        Ok(Self {
            ints,
            ideal_bits,
            encoded_bits,
        })
    }

    pub fn dim(&self) -> usize {
        self.ints.len()
    }
}

/// Receiver-side estimate of the signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    /// `ẑ − z`; only known when the caller supplies the original signal.
    pub error: Option<Vec<f64>>,
}

/// Noise for dim `k` of a message keyed at `base` uses `base.dim + k`.
fn dither(base: NoiseKey, delta: f64, dims: usize) -> Vec<f64> {
    (0..dims)
        .map(|k| rng::noise_unchecked(base.with_dim(base.dim.wrapping_add(k as u32)), delta))
        .collect()
}

fn bin_index(value: f64, eps: f64, delta: f64, index: usize) -> Result<i64> {
    let m = ((value + eps) / delta).floor();
    if m.abs() > MAX_MAGNITUDE as f64 {
        return Err(DdclError::SignalOverflow { index, value });
    }
    Ok(m as i64)
}

pub(crate) fn quantize_with_noise(z: &Signal, eps: &[f64], delta: f64) -> Result<DiscreteMessage> {
    rng::check_delta(delta)?;
    if eps.len() != z.dim() {
        return Err(DdclError::ShapeMismatch {
            expected: z.dim(),
            actual: eps.len(),
        });
    }
    let ints = z
        .values
        .iter()
        .zip(eps)
        .enumerate()
        .map(|(k, (&v, &e))| bin_index(v, e, delta, k))
        .collect::<Result<Vec<_>>>()?;
    DiscreteMessage::from_ints(ints)
}

pub(crate) fn reconstruct_with_noise(
    m: &DiscreteMessage,
    eps: &[f64],
    delta: f64,
    reference: Option<&Signal>,
) -> Result<Reconstruction> {
    rng::check_delta(delta)?;
    if eps.len() != m.dim() {
        return Err(DdclError::ShapeMismatch {
            expected: m.dim(),
            actual: eps.len(),
        });
    }
    let values: Vec<f64> = m
        .ints
        .iter()
        .zip(eps)
        .map(|(&mk, &e)| (mk as f64 + 0.5) * delta - e)
        .collect();
    let error = match reference {
        Some(z) if z.dim() != values.len() => {
            return Err(DdclError::ShapeMismatch {
                expected: values.len(),
                actual: z.dim(),
            })
        }
        Some(z) => Some(values.iter().zip(z.values()).map(|(r, v)| r - v).collect()),
        None => None,
    };
    Ok(Reconstruction { values, error })
}

/// Sender side: dither with shared noise and take the bin index.
pub fn quantize(z: &Signal, key_base: NoiseKey, delta: f64) -> Result<DiscreteMessage> {
    rng::check_delta(delta)?;
    quantize_with_noise(z, &dither(key_base, delta, z.dim()), delta)
}

/// Receiver side: re-derive `ε` from the key and subtract it from the bin
/// centre.
pub fn reconstruct(m: &DiscreteMessage, key_base: NoiseKey, delta: f64) -> Result<Reconstruction> {
    rng::check_delta(delta)?;
    reconstruct_with_noise(m, &dither(key_base, delta, m.dim()), delta, None)
}

/// [`reconstruct`] with the original signal visible, filling `error`.
pub fn reconstruct_debug(
    m: &DiscreteMessage,
    key_base: NoiseKey,
    delta: f64,
    original: &Signal,
) -> Result<Reconstruction> {
    rng::check_delta(delta)?;
    reconstruct_with_noise(m, &dither(key_base, delta, m.dim()), delta, Some(original))
}

/// Quantize then reconstruct with the same key. The error vector is filled
/// since `z` is at hand.
pub fn channel_forward(
    z: &Signal,
    key_base: NoiseKey,
    delta: f64,
) -> Result<(DiscreteMessage, Reconstruction)> {
    rng::check_delta(delta)?;
    let eps = dither(key_base, delta, z.dim());
    let m = quantize_with_noise(z, &eps, delta)?;
    let r = reconstruct_with_noise(&m, &eps, delta, Some(z))?;
    Ok((m, r))
}

/// Backward rule of the channel: `∂ẑ/∂z = 1`.
pub fn grad_passthrough(upstream_grad: &[f64]) -> Vec<f64> {
    upstream_grad.to_vec()
}

/// Test hook: quantize with caller-provided noise instead of the keyed
/// stream.
#[cfg(any(test, feature = "test-hooks"))]
pub fn quantize_fixed_noise(z: &Signal, eps: &[f64], delta: f64) -> Result<DiscreteMessage> {
    quantize_with_noise(z, eps, delta)
}

/// Test hook: reconstruct with caller-provided noise.
#[cfg(any(test, feature = "test-hooks"))]
pub fn reconstruct_fixed_noise(
    m: &DiscreteMessage,
    eps: &[f64],
    delta: f64,
    original: Option<&Signal>,
) -> Result<Reconstruction> {
    reconstruct_with_noise(m, eps, delta, original)
}
