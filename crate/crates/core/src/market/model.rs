use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::cholesky_psd;
use crate::{Error, Result};

/// A lognormal risky asset `dS = mu S dt + sigma S dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskyAsset {
    pub drift: f64,
    pub volatility: f64,
    pub initial: f64,
}

/// Constant-coefficient market. The risk-free asset (index 0 in scenario
/// sets) has price `exp(r t)`; risky assets follow correlated geometric
/// Brownian motions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    rate: f64,
    assets: Vec<RiskyAsset>,
    /// Row-major `k x k` correlation matrix.
    correlation: Vec<f64>,
}

impl MarketModel {
    pub fn new(rate: f64, assets: Vec<RiskyAsset>, correlation: Vec<f64>) -> Result<Self> {
        let k = assets.len();
        if !rate.is_finite() {
            return Err(Error::InvalidMarket(format!("short rate must be finite, got {rate}")));
        }
        for (j, a) in assets.iter().enumerate() {
            if !(a.initial > 0.0) || !a.initial.is_finite() {
                return Err(Error::InvalidMarket(format!("asset {j}: initial price must be positive")));
            }
            if !(a.volatility >= 0.0) || !a.volatility.is_finite() || !a.drift.is_finite() {
                return Err(Error::InvalidMarket(format!("asset {j}: drift and volatility must be finite, volatility >= 0")));
            }
            if a.volatility == 0.0 && a.drift != rate {
                return Err(Error::InvalidMarket(format!(
                    "asset {j}: a zero-volatility asset must earn the short rate (drift {} != rate {rate})",
                    a.drift
                )));
            }
        }
        if correlation.len() != k * k {
            return Err(Error::InvalidMarket(format!("correlation must be {k}x{k}")));
        }
        for i in 0..k {
            if libm::fabs(correlation[i * k + i] - 1.0) > 1e-12 {
                return Err(Error::InvalidMarket("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if libm::fabs(correlation[i * k + j] - correlation[j * k + i]) > 1e-12 {
                    return Err(Error::InvalidMarket("correlation must be symmetric".into()));
                }
            }
        }
        if cholesky_psd(&correlation, k).is_none() {
            return Err(Error::InvalidMarket("correlation must be positive semidefinite".into()));
        }
        Ok(Self { rate, assets, correlation })
    }

    /// Bond plus a single risky asset.
    pub fn single(rate: f64, drift: f64, volatility: f64) -> Result<Self> {
        Self::new(rate, vec![RiskyAsset { drift, volatility, initial: 1.0 }], vec![1.0])
    }

    /// Bond-only market.
    pub fn bond_only(rate: f64) -> Result<Self> {
        Self::new(rate, Vec::new(), Vec::new())
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn assets(&self) -> &[RiskyAsset] {
        &self.assets
    }

    pub fn risky_count(&self) -> usize {
        self.assets.len()
    }

    pub fn correlation(&self) -> &[f64] {
        &self.correlation
    }

    /// Price of the risk-free asset at time `t`.
    pub fn bond_price(&self, t: f64) -> f64 {
        libm::exp(self.rate * t)
    }

    /// Lower-triangular factor of the correlation matrix.
    pub(crate) fn correlation_factor(&self) -> Vec<f64> {
        cholesky_psd(&self.correlation, self.assets.len()).expect("validated at construction")
    }

    /// Copy with every risky drift replaced.
    pub fn with_drift(&self, drift: f64) -> Result<Self> {
        let assets = self.assets.iter().map(|a| RiskyAsset { drift, ..*a }).collect();
        Self::new(self.rate, assets, self.correlation.clone())
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(rate, self.assets.clone(), self.correlation.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_parameters() {
        assert!(MarketModel::single(0.02, 0.05, 0.2).is_ok());
        assert!(MarketModel::single(0.02, 0.05, -0.1).is_err());
        assert!(MarketModel::single(0.02, 0.05, 0.0).is_err());
        assert!(MarketModel::single(0.02, 0.02, 0.0).is_ok());
        let a = RiskyAsset { drift: 0.05, volatility: 0.2, initial: 1.0 };
        assert!(MarketModel::new(0.0, vec![a, a], vec![1.0, 0.5, 0.5, 1.0]).is_ok());
        assert!(MarketModel::new(0.0, vec![a, a], vec![1.0, 1.5, 1.5, 1.0]).is_err());
        assert!(MarketModel::new(0.0, vec![a, a], vec![1.0, 0.5, 0.4, 1.0]).is_err());
    }
}
