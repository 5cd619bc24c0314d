//! Calibration of the statistical checks: under the true channel each check
//! passes in at least 95 of 100 independent repetitions, and against its
//! counter-oracle it fails in at least 95 of 100.

use ddcl::stats::{
    self, draw, test_error_independence, test_error_uniform, test_expected_magnitude,
    test_jensen_bound, test_unbiasedness, ErrorSource, TestReport,
};

const REPS: u64 = 100;
const N: usize = 10_000;

fn pass_count(run: impl Fn(u64) -> TestReport) -> u64 {
    (0..REPS).filter(|&seed| run(1_000 + seed).pass).count() as u64
}

fn calibrated(name: &str, run: impl Fn(u64, ErrorSource) -> TestReport, counter: ErrorSource) {
    let null = pass_count(|s| run(s, ErrorSource::SharedNoise));
    let alt = pass_count(|s| run(s, counter));
    println!("{name}: null passes {null}/{REPS}, {counter:?} passes {alt}/{REPS}");
    assert!(null >= 95, "{name}: only {null}/{REPS} passes under the null");
    assert!(REPS - alt >= 95, "{name}: counter-oracle passed {alt}/{REPS} times");
}

#[test]
fn error_uniform_is_calibrated() {
    calibrated(
        "error_uniform",
        |s, src| test_error_uniform(0.37, 1.0, N, s, src).unwrap(),
        ErrorSource::DeterministicRounding,
    );
    calibrated(
        "error_uniform",
        |s, src| test_error_uniform(2.7, 15.0, N, s, src).unwrap(),
        ErrorSource::HalvedWidth,
    );
}

#[test]
fn folded_errors_are_rejected() {
    let rejected = (0..REPS)
        .filter(|&seed| {
            let folded: Vec<f64> = draw(0.0, 1.0, N, seed, 0, ErrorSource::SharedNoise)
                .map(|s| s.error.abs())
                .collect();
            !stats::uniformity_of("folded", &folded, 1.0).unwrap().pass
        })
        .count() as u64;
    assert!(rejected >= 95, "{rejected}");
}

#[test]
fn error_independence_is_calibrated() {
    calibrated(
        "error_independence",
        |s, src| test_error_independence(&[-3.0, 0.0, 2.5], 1.0, N, s, src).unwrap(),
        ErrorSource::DeterministicRounding,
    );
}

#[test]
fn unbiasedness_is_calibrated() {
    calibrated(
        "unbiasedness",
        |s, src| test_unbiasedness(0.3, 1.0, N, s, src).unwrap(),
        ErrorSource::DeterministicRounding,
    );
}

#[test]
fn expected_magnitude_is_calibrated() {
    calibrated(
        "expected_magnitude",
        |s, src| test_expected_magnitude(10.0, 1.0, N, s, src).unwrap(),
        ErrorSource::HalvedWidth,
    );
}

#[test]
fn jensen_bound_is_calibrated() {
    calibrated(
        "jensen_bound",
        |s, src| test_jensen_bound(5.0, 1.0, N, s, src).unwrap(),
        ErrorSource::HalvedWidth,
    );
}
