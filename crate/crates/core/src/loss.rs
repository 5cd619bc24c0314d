//! Communication cost and the fixed-precision baseline.
//!
//! [`comms_cost`] is the differentiable bit-cost surrogate
//! `log2(2|z|/δ + 1)` per dim, an upper bound on the expected ideal length of
//! the transmitted integer for large signals. [`fake_quantize`] is the
//! straight-through min/max quantizer used as the fixed-bit-width baseline.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{DdclError, Result};
use crate::rng::check_delta;

/// Per-message surrogate cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommsCost {
    pub total: f64,
    pub per_dim: Vec<f64>,
}

#[inline]
pub fn dim_cost(z: f64, delta: f64) -> f64 {
    (2.0 * z.abs() / delta + 1.0).log2()
}

/// `d/dz log2(2|z|/δ + 1)`, with subgradient 0 at the kink.
#[inline]
pub fn dim_cost_grad(z: f64, delta: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z.signum() * 2.0 / (LN_2 * (2.0 * z.abs() + delta))
    }
}

pub fn comms_cost(z: &[f64], delta: f64) -> Result<CommsCost> {
    check_delta(delta)?;
    let per_dim: Vec<f64> = z.iter().map(|&v| dim_cost(v, delta)).collect();
    Ok(CommsCost {
        total: per_dim.iter().sum(),
        per_dim,
    })
}

pub fn comms_cost_grad(z: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    Ok(z.iter().map(|&v| dim_cost_grad(v, delta)).collect())
}

/// Affine quantization parameters derived from a tensor's range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FakeQuantParams {
    pub bits: u32,
    pub min_val: f64,
    pub max_val: f64,
    pub scale: f64,
    pub zero_point: f64,
}

impl FakeQuantParams {
    pub fn q_max(&self) -> f64 {
        f64::from((1u32 << self.bits) - 1)
    }

    pub fn from_tensor(tensor: &[f64], bits: u32) -> Result<Self> {
        if !matches!(bits, 4 | 8 | 16) {
            return Err(DdclError::UnsupportedBitWidth(bits));
        }
        if tensor.is_empty() {
            return Err(DdclError::EmptyTensor);
        }
        let q_min = 0.0;
        let q_max = f64::from((1u32 << bits) - 1);
        let mut min_val = tensor.iter().copied().fold(f64::INFINITY, f64::min);
        let mut max_val = tensor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min_val == max_val {
            min_val -= 0.01;
            max_val += 0.01;
        }
        let scale = (max_val - min_val) / (q_max - q_min);
        let zero_point = (q_min - min_val / scale).round_ties_even();
        Ok(Self {
            bits,
            min_val,
            max_val,
            scale,
            zero_point,
        })
    }

    /// Quantize-dequantize one value with these parameters.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let q = (x / self.scale + self.zero_point)
            .round_ties_even()
            .clamp(0.0, self.q_max());
        (q - self.zero_point) * self.scale
    }
}

/// Simulated `bits`-wide quantization over the tensor's own range.
///
/// Rounding is half-to-even. Backward is the identity (see
/// [`fake_quantize_grad`]).
pub fn fake_quantize(tensor: &[f64], bits: u32) -> Result<Vec<f64>> {
    let params = FakeQuantParams::from_tensor(tensor, bits)?;
    Ok(tensor.iter().map(|&x| params.apply(x)).collect())
}

/// Straight-through backward rule.
pub fn fake_quantize_grad(upstream_grad: &[f64]) -> Vec<f64> {
    upstream_grad.to_vec()
}
