use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MarketModel;
use crate::rng::{stream, streams};
use crate::{Error, Result, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Real-world measure.
    P,
    /// Risk-neutral measure.
    Q,
}

/// Monte Carlo asset-price paths on the grid points `0, dt, ..., T`.
/// Asset 0 is the bond; assets `1..=k` are the risky assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub measure: Measure,
    pub seed: u64,
    pub grid: TimeGrid,
    paths: usize,
    assets: usize,
    prices: Vec<f64>,
    weights: Vec<f64>,
}

impl ScenarioSet {
    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Number of assets including the bond.
    pub fn assets(&self) -> usize {
        self.assets
    }

    /// Number of stored time points (`m + 1`).
    pub fn points(&self) -> usize {
        self.grid.len() + 1
    }

    pub fn weight(&self, path: usize) -> f64 {
        self.weights[path]
    }

    pub fn price(&self, path: usize, t: usize, asset: usize) -> f64 {
        self.prices[(path * self.points() + t) * self.assets + asset]
    }

    /// Gross return of `asset` over `[t, t + dt)` on `path`.
    pub fn gross_return(&self, path: usize, t: usize, asset: usize) -> f64 {
        self.price(path, t + 1, asset) / self.price(path, t, asset)
    }
}

/// Simulates exact lognormal steps. Path `p` draws from its own stream, so the
/// set is identical however paths are scheduled.
pub fn simulate_paths(
    model: &MarketModel,
    grid: TimeGrid,
    n_paths: usize,
    measure: Measure,
    seed: u64,
) -> Result<ScenarioSet> {
    if n_paths == 0 {
        return Err(Error::InvalidMarket("at least one path is required".into()));
    }
    let k = model.risky_count();
    let assets = k + 1;
    let points = grid.len() + 1;
    let dt = grid.step();
    let chol = model.correlation_factor();
    let drift: Vec<f64> = model
        .assets()
        .iter()
        .map(|a| {
            let mu = match measure {
                Measure::P => a.drift,
                Measure::Q => model.rate(),
            };
            (mu - 0.5 * a.volatility * a.volatility) * dt
        })
        .collect();
    let diffusion: Vec<f64> = model.assets().iter().map(|a| a.volatility * libm::sqrt(dt)).collect();
    let mut prices = vec![0.0; n_paths * points * assets];
    let mut z = vec![0.0; k];
    let mut log_s = vec![0.0; k];
    for p in 0..n_paths {
        let mut rng = stream(seed, streams::MARKET, p as u64);
        for (j, a) in model.assets().iter().enumerate() {
            log_s[j] = libm::log(a.initial);
        }
        for t in 0..points {
            let base = (p * points + t) * assets;
            if t > 0 {
                for zj in z.iter_mut() {
                    *zj = StandardNormal.sample(&mut rng);
                }
                for j in 0..k {
                    let eps: f64 = (0..=j).map(|q| chol[j * k + q] * z[q]).sum();
                    log_s[j] += drift[j] + diffusion[j] * eps;
                }
            }
            prices[base] = model.bond_price(grid.time(t));
            for j in 0..k {
                prices[base + 1 + j] = libm::exp(log_s[j]);
            }
        }
    }
    let weights = vec![1.0 / n_paths as f64; n_paths];
    Ok(ScenarioSet { measure, seed, grid, paths: n_paths, assets, prices, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bond_only_paths_are_deterministic() {
        let model = MarketModel::bond_only(0.03).unwrap();
        let grid = TimeGrid::new(0.5, 5.0).unwrap();
        let set = simulate_paths(&model, grid, 7, Measure::P, 1).unwrap();
        for p in 0..7 {
            for t in 0..set.points() {
                assert_abs_diff_eq!(set.price(p, t, 0), libm::exp(0.03 * grid.time(t)), epsilon = 1e-15);
            }
        }
        let total: f64 = (0..7).map(|p| set.weight(p)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let model = MarketModel::single(0.02, 0.06, 0.2).unwrap();
        let grid = TimeGrid::new(1.0, 10.0).unwrap();
        let a = simulate_paths(&model, grid, 50, Measure::Q, 42).unwrap();
        let b = simulate_paths(&model, grid, 50, Measure::Q, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&model, grid, 50, Measure::Q, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_paths_is_an_error() {
        let model = MarketModel::single(0.02, 0.06, 0.2).unwrap();
        let grid = TimeGrid::new(1.0, 10.0).unwrap();
        assert!(simulate_paths(&model, grid, 0, Measure::P, 0).is_err());
    }
}
