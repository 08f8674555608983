//! Gain functions with mortality: von Neumann–Morgenstern, exponential
//! Kihlstrom–Mirman and Epstein–Zin, evaluated on weighted scenarios or on
//! the lattice-with-death chain.

mod chain;
mod checks;
mod ez;
mod recursion;
mod scenario;
mod utility;

pub use chain::{evaluate, evaluate_with_gradient, AliveChain, DeterministicChain, LatticeChain};
pub use checks::{check_concavity, check_monotonicity, check_non_saturation, ShapeReport, ShapeViolation};
pub use ez::{ez_aggregator, ez_utility_discrete};
pub use recursion::Recursion;
pub use scenario::{exp_km_utility, vnm_utility};
pub use utility::Utility;

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VnmParams {
    pub utility: Utility,
    #[serde(default)]
    pub discount: f64,
}

impl VnmParams {
    pub fn new(utility: Utility, discount: f64) -> Result<Self> {
        let p = Self { utility, discount };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.utility.validate()?;
        if !(self.discount >= 0.0 && self.discount.is_finite()) {
            return Err(Error::InvalidPreferences(format!("discount rate must be >= 0, got {}", self.discount)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpKmParams {
    pub utility: Utility,
}

impl ExpKmParams {
    pub fn new(utility: Utility) -> Result<Self> {
        utility.validate()?;
        Ok(Self { utility })
    }
}

/// Epstein–Zin parameters: risk exponent `alpha < 0`, substitution
/// `0 < rho < 1`, discount `b > 0` and adequacy level `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EzParams {
    pub alpha: f64,
    pub rho: f64,
    pub discount: f64,
    pub adequacy: f64,
}

impl EzParams {
    pub fn new(alpha: f64, rho: f64, discount: f64, adequacy: f64) -> Result<Self> {
        let p = Self { alpha, rho, discount, adequacy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha < 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidPreferences(format!("Epstein–Zin alpha must be negative, got {}", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidPreferences(format!("Epstein–Zin rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.discount > 0.0 && self.discount.is_finite()) {
            return Err(Error::InvalidPreferences(format!("Epstein–Zin discount must be positive, got {}", self.discount)));
        }
        if !(self.adequacy > 0.0 && self.adequacy.is_finite()) {
            return Err(Error::InvalidPreferences(format!("adequacy level must be positive, got {}", self.adequacy)));
        }
        Ok(())
    }

    /// Terminal and post-death value `a^alpha / alpha`.
    pub fn terminal(&self) -> f64 {
        libm::pow(self.adequacy, self.alpha) / self.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GainFunction {
    Vnm(VnmParams),
    ExpKm(ExpKmParams),
    EpsteinZin(EzParams),
}

impl GainFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            GainFunction::Vnm(p) => p.validate(),
            GainFunction::ExpKm(p) => p.utility.validate(),
            GainFunction::EpsteinZin(p) => p.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GainFunction::Vnm(_) => "vnm",
            GainFunction::ExpKm(_) => "exp_km",
            GainFunction::EpsteinZin(_) => "epstein_zin",
        }
    }

    /// Gain of a life that consumes nothing at all; `-inf` for singular `u`.
    pub fn zero_consumption_is_finite(&self) -> bool {
        match self {
            GainFunction::Vnm(p) => !p.utility.singular_at_zero(),
            GainFunction::ExpKm(p) => !p.utility.singular_at_zero(),
            GainFunction::EpsteinZin(_) => true,
        }
    }
}
