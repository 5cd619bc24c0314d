//! Statistical checks of the channel's guarantees.
//!
//! Each check draws Monte-Carlo samples from the channel with fixed seeds
//! and produces a [`TestReport`]. Most take an [`ErrorSource`] so the same
//! statistic can be pointed at a deliberately broken quantizer to confirm
//! it rejects it.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::codec::ideal_bit_length;
use crate::error::{DdclError, Result};
use crate::loss::dim_cost;
use crate::rng::{check_delta, noise_unchecked, NoiseKey};

pub const P_THRESHOLD: f64 = 0.01;
pub const ERROR_BINS: usize = 32;
pub const MIN_SAMPLES: usize = 10_000;

/// Which quantizer produces the samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    /// The real channel: shared dither, floor bin, dither subtracted.
    SharedNoise,
    /// Counter-oracle: `m = round(z/δ)`, `ẑ = mδ`, no noise at all.
    DeterministicRounding,
    /// Counter-oracle: the sender quantizes at `δ/2` while costs are
    /// accounted at `δ`.
    HalvedWidth,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSample {
    pub m: i64,
    pub z_hat: f64,
    pub error: f64,
}

/// One scalar pass through the selected quantizer.
pub fn sample_channel(z: f64, delta: f64, key: NoiseKey, source: ErrorSource) -> ChannelSample {
    let (m, z_hat) = match source {
        ErrorSource::SharedNoise => {
            let eps = noise_unchecked(key, delta);
            let m = ((z + eps) / delta).floor();
            (m, (m + 0.5) * delta - eps)
        }
        ErrorSource::DeterministicRounding => {
            let m = (z / delta).round();
            (m, m * delta)
        }
        ErrorSource::HalvedWidth => {
            let width = delta / 2.0;
            let eps = noise_unchecked(key, width);
            let m = ((z + eps) / width).floor();
            (m, (m + 0.5) * width - eps)
        }
    };
    ChannelSample {
        m: m as i64,
        z_hat,
        error: z_hat - z,
    }
}

/// `n` independent samples; sample `i` uses key `(seed, stream, i, 0)`.
pub fn draw(
    z: f64,
    delta: f64,
    n: usize,
    seed: u64,
    stream: u32,
    source: ErrorSource,
) -> impl Iterator<Item = ChannelSample> {
    (0..n).map(move |i| sample_channel(z, delta, NoiseKey::new(seed, stream, i as u32, 0), source))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    /// Distance to the decision threshold where no p-value applies;
    /// positive means the check holds.
    pub margin: Option<f64>,
    pub pass: bool,
    /// False when the inputs fall outside the regime the check is meant
    /// for; such reports are informational.
    pub applicable: bool,
    pub sample_size: usize,
    pub z: Vec<f64>,
    pub delta: f64,
    pub note: Option<String>,
}

impl TestReport {
    fn chi_square(name: &str, stat: f64, df: f64, n: usize, z: Vec<f64>, delta: f64) -> Self {
        let p = chi_square_sf(stat, df);
        Self {
            name: name.to_string(),
            statistic: stat,
            p_value: Some(p),
            margin: None,
            pass: p > P_THRESHOLD,
            applicable: true,
            sample_size: n,
            z,
            delta,
            note: None,
        }
    }
}

fn chi_square_sf(stat: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("df > 0").sf(stat)
}

fn bin_of(e: f64, delta: f64, bins: usize) -> usize {
    let idx = ((e / delta + 0.5) * bins as f64).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

fn histogram(errors: impl Iterator<Item = f64>, delta: f64, bins: usize) -> (Vec<u64>, usize) {
    let mut counts = vec![0u64; bins];
    let mut n = 0;
    for e in errors {
        counts[bin_of(e, delta, bins)] += 1;
        n += 1;
    }
    (counts, n)
}

/// Pearson chi-square of counts against equal expected frequencies.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    (stat, chi_square_sf(stat, (counts.len() - 1) as f64))
}

/// Chi-square test of homogeneity over a `rows × bins` contingency table.
/// Empty columns are dropped. Returns `(statistic, df, p)`.
pub fn chi_square_homogeneity(table: &[Vec<u64>]) -> (f64, f64, f64) {
    let cols = table[0].len();
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let total: f64 = row_tot.iter().sum();
    let live = col_tot.iter().filter(|&&c| c > 0.0).count();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            if col_tot[j] == 0.0 {
                continue;
            }
            let exp = row_tot[i] * col_tot[j] / total;
            stat += (obs as f64 - exp).powi(2) / exp;
        }
    }
    let df = ((table.len() - 1) * live.saturating_sub(1)) as f64;
    if df == 0.0 {
        // A single occupied bin is a point mass in every row: maximally
        // non-uniform, but homogeneous only if every row is that same mass.
        return (stat, 0.0, if live <= 1 { 0.0 } else { 1.0 });
    }
    (stat, df, chi_square_sf(stat, df))
}

fn require_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(DdclError::Precondition(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

/// Uniformity of arbitrary error samples over `[−δ/2, δ/2)`.
pub fn uniformity_of(name: &str, errors: &[f64], delta: f64) -> Result<TestReport> {
    check_delta(delta)?;
    let (counts, n) = histogram(errors.iter().copied(), delta, ERROR_BINS);
    let (stat, _) = chi_square_uniform(&counts);
    Ok(TestReport::chi_square(
        name,
        stat,
        (ERROR_BINS - 1) as f64,
        n,
        vec![],
        delta,
    ))
}

/// Reconstruction errors at a fixed `z` are uniform on `[−δ/2, δ/2)`.
pub fn test_error_uniform(
    z: f64,
    delta: f64,
    n: usize,
    seed: u64,
    source: ErrorSource,
) -> Result<TestReport> {
    check_delta(delta)?;
    require_samples(n)?;
    let (counts, n) = histogram(draw(z, delta, n, seed, 0, source).map(|s| s.error), delta, ERROR_BINS);
    let (stat, _) = chi_square_uniform(&counts);
    Ok(TestReport::chi_square(
        "error_uniform",
        stat,
        (ERROR_BINS - 1) as f64,
        n,
        vec![z],
        delta,
    ))
}

/// Error histograms are homogeneous across a grid of signals.
pub fn test_error_independence(
    z_grid: &[f64],
    delta: f64,
    n: usize,
    seed: u64,
    source: ErrorSource,
) -> Result<TestReport> {
    check_delta(delta)?;
    if z_grid.len() < 3 {
        return Err(DdclError::Precondition(format!(
            "independence needs at least 3 grid points, got {}",
            z_grid.len()
        )));
    }
    require_samples(n)?;
    let table: Vec<Vec<u64>> = z_grid
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            histogram(
                draw(z, delta, n, seed, i as u32 + 1, source).map(|s| s.error),
                delta,
                ERROR_BINS,
            )
            .0
        })
        .collect();
    let (stat, df, p) = chi_square_homogeneity(&table);
    Ok(TestReport {
        name: "error_independence".into(),
        statistic: stat,
        p_value: Some(p),
        margin: None,
        pass: p > P_THRESHOLD,
        applicable: true,
        sample_size: n * z_grid.len(),
        z: z_grid.to_vec(),
        delta,
        note: Some(format!("df = {df}")),
    })
}

/// `|mean(ẑ) − z| ≤ 3·δ/√(12n)`.
pub fn test_unbiasedness(
    z: f64,
    delta: f64,
    n: usize,
    seed: u64,
    source: ErrorSource,
) -> Result<TestReport> {
    check_delta(delta)?;
    require_samples(n)?;
    let mean = draw(z, delta, n, seed, 0x0B1A5, source)
        .map(|s| s.z_hat)
        .sum::<f64>()
        / n as f64;
    let bound = 3.0 * delta / (12.0 * n as f64).sqrt();
    let dev = (mean - z).abs();
    Ok(TestReport {
        name: "unbiasedness".into(),
        statistic: mean - z,
        p_value: None,
        margin: Some(bound - dev),
        pass: dev <= bound,
        applicable: true,
        sample_size: n,
        z: vec![z],
        delta,
        note: Some(format!("mean(ẑ) = {mean}")),
    })
}

fn mean_and_stderr(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, (var / n as f64).sqrt(), n)
}

/// `E[|m + 1/2|] = |z|/δ` for large signals.
///
/// With the floor bin the index `m` is offset by half a bin from `z/δ`;
/// the bin-centre index `m + 1/2` is the quantity whose expected magnitude
/// equals `|z|/δ`. The raw `E[|m|]` is reported in the note.
pub fn test_expected_magnitude(
    z: f64,
    delta: f64,
    n: usize,
    seed: u64,
    source: ErrorSource,
) -> Result<TestReport> {
    check_delta(delta)?;
    require_samples(n)?;
    let target = z.abs() / delta;
    let applicable = z.abs() >= 10.0 * delta;
    let samples: Vec<i64> = draw(z, delta, n, seed, 0x3A6, source).map(|s| s.m).collect();
    let (mean, stderr, _) = mean_and_stderr(samples.iter().map(|&m| (m as f64 + 0.5).abs()));
    let raw = samples.iter().map(|m| m.unsigned_abs() as f64).sum::<f64>() / n as f64;
    // A zero-variance sample still gets a floor of one part in 10^12.
    let tol = 3.0 * stderr.max(1e-12 * target.max(1.0));
    let dev = (mean - target).abs();
    Ok(TestReport {
        name: "expected_magnitude".into(),
        statistic: mean,
        p_value: None,
        margin: Some(tol - dev),
        pass: dev <= tol,
        applicable,
        sample_size: n,
        z: vec![z],
        delta,
        note: Some(if applicable {
            format!("target |z|/δ = {target}; raw mean |m| = {raw}")
        } else {
            format!("not applicable: |z| < 10δ; raw mean |m| = {raw}")
        }),
    })
}

/// Monte-Carlo `E[log2(2|m|+1)] ≤ log2(2|z|/δ+1) + 3·stderr`.
///
/// Also reports the Jensen gap `log2(2·E|m|+1) − E[log2(2|m|+1)]`. Signals
/// with `|z| < δ` fall in the small-signal regime where the linear
/// magnitude law does not hold; negative signals sit half a bin further
/// from zero under the floor bin. Both are reported as not applicable.
pub fn test_jensen_bound(
    z: f64,
    delta: f64,
    n: usize,
    seed: u64,
    source: ErrorSource,
) -> Result<TestReport> {
    check_delta(delta)?;
    require_samples(n)?;
    let ms: Vec<i64> = draw(z, delta, n, seed, 0x1E5E, source).map(|s| s.m).collect();
    let (lhs, stderr, _) = mean_and_stderr(ms.iter().map(|&m| ideal_bit_length(m)));
    let mean_abs = ms.iter().map(|m| m.unsigned_abs() as f64).sum::<f64>() / n as f64;
    let rhs = dim_cost(z, delta);
    let jensen_gap = (2.0 * mean_abs + 1.0).log2() - lhs;
    let slack = rhs + 3.0 * stderr - lhs;
    let regime = if z.abs() < delta {
        Some("small-signal caveat")
    } else if z < 0.0 {
        Some("negative-signal caveat")
    } else {
        None
    };
    Ok(TestReport {
        name: "jensen_bound".into(),
        statistic: lhs,
        p_value: None,
        margin: Some(slack),
        pass: slack >= 0.0,
        applicable: regime.is_none(),
        sample_size: n,
        z: vec![z],
        delta,
        note: Some(format!(
            "E[log2(2|m|+1)] = {lhs:.6} ± {stderr:.2e}; surrogate = {rhs:.6}; jensen gap = {jensen_gap:.6}; bound slack = {:.6}{}",
            rhs - lhs,
            regime.map(|r| format!("; {r}")).unwrap_or_default()
        )),
    })
}

/// Result of the full verification run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub full: bool,
    pub seed: u64,
    pub passed: bool,
    pub elapsed_secs: f64,
    /// Checks that decide `passed`.
    pub checks: Vec<TestReport>,
    /// Informational rows outside the asserted regimes.
    pub caveats: Vec<TestReport>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &TestReport> {
        self.checks.iter().filter(|r| !r.pass)
    }
}

pub const Z_GRID: [f64; 5] = [-3.0, -1.3, 0.0, 0.7, 2.5];
pub const DELTA_GRID: [f64; 3] = [0.1, 1.0, 15.0];
pub const JENSEN_Z: [f64; 4] = [1.0, 5.0, 7.3, 50.0];
pub const JENSEN_DELTA: [f64; 2] = [0.5, 1.0];

/// Runs every check. `full` uses 10^6 samples for the distributional
/// checks; otherwise 10^5.
pub fn verify_suite(full: bool, seed: u64) -> Result<VerifyReport> {
    let start = Instant::now();
    let n = if full { 1_000_000 } else { 100_000 };
    let n_small = 100_000;
    let src = ErrorSource::SharedNoise;
    let mut checks = Vec::new();
    let mut caveats = Vec::new();

    for (i, &delta) in DELTA_GRID.iter().enumerate() {
        for (j, &z) in Z_GRID.iter().enumerate() {
            let s = seed ^ ((i as u64) << 8 | j as u64);
            checks.push(test_error_uniform(z, delta, n, s, src)?);
            checks.push(test_unbiasedness(z, delta, n, s, src)?);
        }
        checks.push(test_error_independence(&Z_GRID, delta, n, seed ^ (i as u64) << 16, src)?);
    }
    for &delta in &JENSEN_DELTA {
        for &z in &JENSEN_Z {
            checks.push(test_jensen_bound(z, delta, n_small, seed, src)?);
        }
        caveats.push(test_jensen_bound(0.0, delta, n_small, seed, src)?);
        caveats.push(test_jensen_bound(-5.0, delta, n_small, seed, src)?);
    }
    checks.push(test_expected_magnitude(10.0, 1.0, n_small, seed, src)?);
    checks.push(test_expected_magnitude(150.0, 15.0, n_small, seed, src)?);
    caveats.push(test_expected_magnitude(0.1, 1.0, n_small, seed, src)?);

    let passed = checks.iter().all(|r| r.pass && r.applicable);
    Ok(VerifyReport {
        full,
        seed,
        passed,
        elapsed_secs: start.elapsed().as_secs_f64(),
        checks,
        caveats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        let r = test_error_uniform(0.0, 1.0, 1_000_000, 1, ErrorSource::SharedNoise).unwrap();
        assert!(r.pass, "{r:?}");
        let r = test_error_uniform(2.7, 15.0, 1_000_000, 2, ErrorSource::SharedNoise).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn uniform_rejects_folded_errors() {
        let errors: Vec<f64> = draw(0.3, 1.0, 100_000, 4, 0, ErrorSource::SharedNoise)
            .map(|s| s.error.abs())
            .collect();
        assert!(!uniformity_of("abs", &errors, 1.0).unwrap().pass);
    }

    #[test]
    fn independence_examples() {
        let grid = [-3.0, 0.0, 2.5];
        let ok = test_error_independence(&grid, 1.0, 100_000, 5, ErrorSource::SharedNoise).unwrap();
        assert!(ok.pass, "{ok:?}");
        let bad =
            test_error_independence(&grid, 1.0, 100_000, 5, ErrorSource::DeterministicRounding)
                .unwrap();
        assert!(!bad.pass);
        assert!(matches!(
            test_error_independence(&[0.0], 1.0, 100_000, 5, ErrorSource::SharedNoise),
            Err(DdclError::Precondition(_))
        ));
    }

    #[test]
    fn homogeneity_of_point_masses() {
        let same = vec![vec![0, 10, 0], vec![0, 10, 0], vec![0, 10, 0]];
        assert_eq!(chi_square_homogeneity(&same).2, 0.0);
        let differ = vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]];
        assert!(chi_square_homogeneity(&differ).2 < 1e-6);
    }

    #[test]
    fn magnitude_examples() {
        let a = test_expected_magnitude(10.0, 1.0, 100_000, 6, ErrorSource::SharedNoise).unwrap();
        assert!(a.pass && a.applicable, "{a:?}");
        let b = test_expected_magnitude(150.0, 15.0, 100_000, 6, ErrorSource::SharedNoise).unwrap();
        assert!(b.pass && b.applicable, "{b:?}");
        assert!((b.statistic - 10.0).abs() < 0.01);
        let c = test_expected_magnitude(0.1, 1.0, 100_000, 6, ErrorSource::SharedNoise).unwrap();
        assert!(!c.applicable);
    }

    #[test]
    fn jensen_examples() {
        let zero = test_jensen_bound(0.0, 1.0, 100_000, 7, ErrorSource::SharedNoise).unwrap();
        assert!(!zero.applicable);
        assert!(!zero.pass);
        assert!((zero.statistic - 0.5 * 3f64.log2()).abs() < 0.01);

        let five = test_jensen_bound(5.0, 1.0, 100_000, 7, ErrorSource::SharedNoise).unwrap();
        let fifty = test_jensen_bound(50.0, 1.0, 100_000, 7, ErrorSource::SharedNoise).unwrap();
        assert!(five.pass && five.applicable);
        assert!(fifty.pass && fifty.applicable);
        let slack = |r: &TestReport| dim_cost(r.z[0], r.delta) - r.statistic;
        assert!(slack(&five) > 0.0);
        assert!(slack(&fifty) < slack(&five));
    }

    #[test]
    fn precondition_on_sample_count() {
        assert!(test_error_uniform(0.0, 1.0, 10, 0, ErrorSource::SharedNoise).is_err());
        assert!(test_jensen_bound(0.0, 1.0, 9_999, 0, ErrorSource::SharedNoise).is_err());
    }
}
