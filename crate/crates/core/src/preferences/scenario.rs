use alloc::format;
use alloc::vec::Vec;

use super::{ExpKmParams, VnmParams};
use crate::{Error, Result, TimeGrid};

fn check_inputs(grid: TimeGrid, consumption: &[Vec<f64>], death: &[usize], weights: &[f64]) -> Result<f64> {
    if consumption.len() != death.len() || consumption.len() != weights.len() || consumption.is_empty() {
        return Err(Error::Shape(format!(
            "{} streams, {} death times, {} weights",
            consumption.len(),
            death.len(),
            weights.len()
        )));
    }
    if let Some(bad) = consumption.iter().position(|c| c.len() != grid.len()) {
        return Err(Error::Shape(format!("stream {bad} does not cover the grid")));
    }
    if let Some(bad) = death.iter().position(|&d| d >= grid.len()) {
        return Err(Error::Shape(format!("death index of scenario {bad} is off the grid")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Shape("scenario weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Shape("scenario weights sum to zero".into()));
    }
    Ok(total)
}

/// Weighted mean over scenarios of `sum_{t <= tau} e^{-bt} u(gamma_t) dt`.
/// Negative consumption before death in a scenario of positive weight gives
/// `-inf`.
pub fn vnm_utility(
    params: &VnmParams,
    grid: TimeGrid,
    consumption: &[Vec<f64>],
    death: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let total = check_inputs(grid, consumption, death, weights)?;
    let dt = grid.step();
    let mut acc = 0.0;
    for ((stream, &tau), &w) in consumption.iter().zip(death).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let mut path = 0.0;
        for (t, &c) in stream[..=tau].iter().enumerate() {
            if c < 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            path += libm::exp(-params.discount * grid.time(t)) * params.utility.value(c) * dt;
        }
        acc += w * path;
    }
    Ok(acc / total)
}

/// Weighted mean over scenarios of `-exp(-sum_{t <= tau} u(gamma_t) dt)`.
pub fn exp_km_utility(
    params: &ExpKmParams,
    grid: TimeGrid,
    consumption: &[Vec<f64>],
    death: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let total = check_inputs(grid, consumption, death, weights)?;
    let dt = grid.step();
    let mut acc = 0.0;
    for ((stream, &tau), &w) in consumption.iter().zip(death).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let mut exponent = 0.0;
        for &c in &stream[..=tau] {
            if c < 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            exponent += params.utility.value(c) * dt;
        }
        acc += w * -libm::exp(-exponent);
    }
    Ok(acc / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::Utility;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn log_constant_stream_deterministic_death() {
        let grid = TimeGrid::new(0.25, 5.0).unwrap();
        let p = VnmParams::new(Utility::Log, 0.0).unwrap();
        let c = 1.7;
        let v = vnm_utility(&p, grid, &[vec![c; 20]], &[19], &[1.0]).unwrap();
        assert_relative_eq!(v, 5.0 * libm::log(c), max_relative = 1e-13);
    }

    #[test]
    fn negative_consumption_is_minus_infinity() {
        let grid = TimeGrid::new(1.0, 3.0).unwrap();
        let p = VnmParams::new(Utility::Exponential { rate: 1.0 }, 0.0).unwrap();
        let streams = [vec![1.0, 1.0, 1.0], vec![1.0, -0.1, 1.0]];
        assert_eq!(vnm_utility(&p, grid, &streams, &[2, 2], &[0.5, 0.5]).unwrap(), f64::NEG_INFINITY);
        // after death the entry is irrelevant
        assert!(vnm_utility(&p, grid, &streams, &[2, 0], &[0.5, 0.5]).unwrap().is_finite());
        // zero weight scenarios are ignored
        assert!(vnm_utility(&p, grid, &streams, &[2, 2], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn exp_km_stub_and_mix() {
        let grid = TimeGrid::new(1.0, 3.0).unwrap();
        let stub = ExpKmParams::new(Utility::PiecewiseLinear { intercept: 0.0, kinks: vec![], slopes: vec![0.0] }).unwrap();
        let streams = [vec![3.0, 1.0, 2.0], vec![0.5, 0.5, 0.5]];
        assert_relative_eq!(exp_km_utility(&stub, grid, &streams, &[1, 2], &[0.3, 0.7]).unwrap(), -1.0);
        let log = ExpKmParams::new(Utility::Log).unwrap();
        let v = exp_km_utility(&log, grid, &streams, &[1, 2], &[0.25, 0.75]).unwrap();
        let hand = 0.25 * -libm::exp(-(libm::log(3.0) + libm::log(1.0))) + 0.75 * -libm::exp(-3.0 * libm::log(0.5));
        assert_relative_eq!(v, hand, max_relative = 1e-14);
    }
}
