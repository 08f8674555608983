use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Evenly spaced consumption grid `{0, dt, ..., T - dt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    step: f64,
    steps: usize,
}

impl TimeGrid {
    /// Builds the grid with step `step` and horizon `horizon`; the horizon
    /// must be a positive integer multiple of the step.
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let ratio = horizon / step;
        let steps = libm::round(ratio);
        if steps < 1.0 || libm::fabs(ratio - steps) > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} is not an integer multiple of step {step}"
            )));
        }
        Ok(Self { step, steps: steps as usize })
    }

    /// Grid with `steps` points of width `step`.
    pub fn with_steps(step: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one grid point is required".into()));
        }
        Self::new(step, step * steps as f64)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of consumption points `m = T / dt`.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.steps as f64
    }

    /// Time of grid index `i`; `i == len()` gives the horizon.
    pub fn time(&self, i: usize) -> f64 {
        self.step * i as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(move |i| self.time(i))
    }

    /// Index of the grid point nearest to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = libm::round(t / self.step);
        if i < 0.0 || libm::fabs(t - i * self.step) > 1e-9 * self.step.max(libm::fabs(t)) {
            return None;
        }
        let i = i as usize;
        (i <= self.steps).then_some(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarterly_grid() {
        let g = TimeGrid::new(0.25, 1.0).unwrap();
        assert_eq!(g.len(), 4);
        let ts: alloc::vec::Vec<f64> = g.times().collect();
        assert_eq!(ts, [0.0, 0.25, 0.5, 0.75]);
        assert_eq!(g.index_of(0.75), Some(3));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn rejects_fractional_horizon() {
        assert!(TimeGrid::new(0.3, 1.0).is_err());
        assert!(TimeGrid::new(0.0, 1.0).is_err());
        assert!(TimeGrid::new(1.0, -2.0).is_err());
    }
}
