//! Counter-based shared noise.
//!
//! Sender and receiver evaluate the dither `ε` for any coordinate
//! `(seed, edge, timestep, dim)` independently, so the noise never crosses
//! the wire. The construction is stateless: every coordinate is absorbed
//! into a 64-bit word through the SplitMix64 finalizer, and the top 53 bits
//! of the result become a uniform value on `[0, 1)`.
//!
//! The exact procedure (constants included) is documented in `docs/noise.md`.

use serde::{Deserialize, Serialize};

use crate::error::{DdclError, Result};

/// Weyl increment of SplitMix64 (`⌊2^64 / φ⌋`, forced odd).
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// Coordinates that identify one scalar of shared noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub edge_id: u32,
    pub timestep: u32,
    pub dim: u32,
}

impl NoiseKey {
    pub fn new(seed: u64, edge_id: u32, timestep: u32, dim: u32) -> Self {
        Self {
            seed,
            edge_id,
            timestep,
            dim,
        }
    }

    /// The same coordinates with a different vector component.
    pub fn with_dim(self, dim: u32) -> Self {
        Self { dim, ..self }
    }

    pub fn with_timestep(self, timestep: u32) -> Self {
        Self { timestep, ..self }
    }
}

/// SplitMix64 finalizer (Stafford variant 13). A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// Hashes a key into a 64-bit word.
///
/// ```text
/// h0 = mix64(seed + γ)
/// h1 = mix64(h0 ^ ((edge_id << 32) | timestep))
/// h2 = mix64((h1 + γ) ^ dim)
/// ```
#[inline]
pub fn noise_word(key: NoiseKey) -> u64 {
    let h = mix64(key.seed.wrapping_add(GOLDEN_GAMMA));
    let h = mix64(h ^ ((u64::from(key.edge_id) << 32) | u64::from(key.timestep)));
    mix64(h.wrapping_add(GOLDEN_GAMMA) ^ u64::from(key.dim))
}

/// Maps a 64-bit word onto `[0, 1)` using its top 53 bits.
#[inline]
pub fn word_to_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform value on `[0, 1)` for a key.
#[inline]
pub fn unit_at(key: NoiseKey) -> f64 {
    word_to_unit(noise_word(key))
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(DdclError::InvalidDelta(delta))
    }
}

/// Dither value `ε ∈ [−δ/2, δ/2)` for a key.
///
/// Computed as `δ · (u − 1/2)`; the subtraction is exact, so
/// `noise_at(k, δ) == δ * noise_at(k, 1.0)` bit for bit.
pub fn noise_at(key: NoiseKey, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(noise_unchecked(key, delta))
}

#[inline]
pub(crate) fn noise_unchecked(key: NoiseKey, delta: f64) -> f64 {
    delta * (unit_at(key) - 0.5)
}

/// Iterator over the noise of consecutive dims starting at `key.dim`.
pub fn noise_vector(key: NoiseKey, delta: f64, len: usize) -> Result<Vec<f64>> {
    check_delta(delta)?;
    Ok((0..len)
        .map(|k| noise_unchecked(key.with_dim(key.dim.wrapping_add(k as u32)), delta))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn deterministic_and_in_range() {
        let key = NoiseKey::default();
        let a = noise_at(key, 1.0).unwrap();
        let b = noise_at(key, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((-0.5..0.5).contains(&a));
    }

    #[test]
    fn rejects_bad_delta() {
        let key = NoiseKey::default();
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(noise_at(key, d), Err(DdclError::InvalidDelta(_))));
        }
    }

    #[test]
    fn unit_interval_extremes() {
        assert_eq!(word_to_unit(0), 0.0);
        assert!(word_to_unit(u64::MAX) < 1.0);
        assert_eq!(word_to_unit(u64::MAX), 1.0 - f64::EPSILON / 2.0);
    }

    #[test]
    fn mean_of_million_samples() {
        let n = 1_000_000u32;
        let sum: f64 = (0..n)
            .map(|d| noise_at(NoiseKey::new(0, 0, 0, d), 1.0).unwrap())
            .sum();
        let mean = sum / f64::from(n);
        let bound = 3.0 * (1.0 / (12.0 * f64::from(n)).sqrt());
        assert!(mean.abs() <= bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn chi_square_64_bins_delta_two() {
        let n = 1_000_000u32;
        let bins = 64usize;
        let mut counts = vec![0u64; bins];
        for t in 0..n {
            let v = noise_at(NoiseKey::new(7, 3, t, 0), 2.0).unwrap();
            let b = (((v + 1.0) / 2.0) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = f64::from(n) / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat} p {p}");
    }

    #[test]
    fn neighbouring_coordinates_uncorrelated() {
        // Pairs of keys differing in exactly one field.
        let n = 200_000u32;
        let pairs: [(fn(u32) -> NoiseKey, fn(u32) -> NoiseKey); 4] = [
            (|i| NoiseKey::new(1, 0, i, 0), |i| NoiseKey::new(1, 0, i, 1)),
            (|i| NoiseKey::new(1, 0, i, 0), |i| NoiseKey::new(1, 1, i, 0)),
            (|i| NoiseKey::new(1, 0, i, 0), |i| NoiseKey::new(2, 0, i, 0)),
            (|i| NoiseKey::new(1, 0, i, 0), |i| NoiseKey::new(1, 0, i + 1, 0)),
        ];
        for (fa, fb) in pairs {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let a = noise_at(fa(i), 1.0).unwrap();
                let b = noise_at(fb(i), 1.0).unwrap();
                sab += a * b;
                saa += a * a;
                sbb += b * b;
            }
            let r = sab / (saa * sbb).sqrt();
            // 4σ under independence is 4/√n ≈ 0.009.
            assert!(r.abs() < 4.0 / f64::from(n).sqrt(), "r = {r}");
        }
    }

    proptest! {
        #[test]
        fn range_and_scaling(seed: u64, edge: u32, t: u32, dim: u32, delta in 1e-6f64..1e6) {
            let key = NoiseKey::new(seed, edge, t, dim);
            let v = noise_at(key, delta).unwrap();
            prop_assert!(v >= -delta / 2.0 && v < delta / 2.0);
            let unit = noise_at(key, 1.0).unwrap();
            prop_assert_eq!(v.to_bits(), (delta * unit).to_bits());
            prop_assert_eq!(v.to_bits(), noise_at(key, delta).unwrap().to_bits());
        }
    }
}
