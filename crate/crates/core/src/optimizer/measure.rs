use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::bisect_increasing;
use crate::preferences::Utility;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSolution {
    pub gamma: Vec<f64>,
    pub value: f64,
    /// Lagrange multiplier of the budget constraint.
    pub multiplier: f64,
}

/// Maximises `sum_i mu_i u(gamma_i)` over `gamma >= 0` with
/// `sum_i mu_i gamma_i = X_0`.
pub fn solve_measure_problem(mu: &[f64], u: &Utility, budget: f64) -> Result<MeasureSolution> {
    u.validate()?;
    if mu.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::Domain { what: "measure weights must be nonnegative", value: mu.iter().cloned().fold(0.0, f64::min) });
    }
    let mass: f64 = mu.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Domain { what: "measure must have positive mass", value: mass });
    }
    if !(budget >= 0.0) {
        return Err(Error::Infeasible("negative budget admits no nonnegative consumption".into()));
    }
    let level = budget / mass;
    let (gamma_level, multiplier) = match u {
        Utility::PiecewiseLinear { kinks, slopes, .. } => piecewise_multiplier(kinks, slopes, level),
        _ => (level, u.marginal(level)),
    };
    let gamma: Vec<f64> = mu.iter().map(|_| gamma_level).collect();
    let value = mu.iter().zip(&gamma).map(|(m, g)| if *m > 0.0 { m * u.value(*g) } else { 0.0 }).sum();
    Ok(MeasureSolution { gamma, value, multiplier })
}

/// Demand interval `[lower, upper]` of `argmax_c u(c) - lambda c`.
fn demand(kinks: &[f64], slopes: &[f64], lambda: f64) -> (f64, f64) {
    let point = |i: usize| if i == 0 { 0.0 } else { kinks.get(i - 1).copied().unwrap_or(f64::INFINITY) };
    let lower = slopes.iter().position(|&s| s <= lambda).map(point).unwrap_or(f64::INFINITY);
    let upper = slopes.iter().position(|&s| s < lambda).map(point).unwrap_or(f64::INFINITY);
    (lower, upper)
}

/// Bisects for the multiplier whose demand interval contains `level`, then
/// spends the budget inside that interval (equally at every point, so the
/// result is the constant `level`).
fn piecewise_multiplier(kinks: &[f64], slopes: &[f64], level: f64) -> (f64, f64) {
    let top = slopes[0] + 1.0;
    let bottom = *slopes.last().expect("validated");
    // upper demand >= level  <=>  lambda <= lambda*
    let lambda = bisect_increasing(|l| if demand(kinks, slopes, l).1 >= level { -1.0 } else { 1.0 }, bottom, top, 200);
    let (lo, hi) = demand(kinks, slopes, lambda);
    let gamma = if level <= lo { lo } else if level >= hi { hi } else { level };
    (gamma, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn log_uniform_measure() {
        let s = solve_measure_problem(&[1.0; 4], &Utility::Log, 4.0).unwrap();
        assert_eq!(s.gamma, vec![1.0; 4]);
        assert_relative_eq!(s.value, 0.0);
    }

    #[test]
    fn negative_budget_is_infeasible() {
        assert!(matches!(solve_measure_problem(&[1.0], &Utility::Log, -1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn piecewise_solution_is_constant() {
        let u = Utility::PiecewiseLinear { intercept: 0.0, kinks: vec![1.0, 2.0], slopes: vec![3.0, 1.0, 0.25] };
        let s = solve_measure_problem(&[0.5, 1.0, 0.5], &u, 3.0).unwrap();
        for g in &s.gamma {
            assert_relative_eq!(*g, 1.5, max_relative = 1e-12);
        }
        assert_relative_eq!(s.multiplier, 1.0, max_relative = 1e-9);
    }
}
