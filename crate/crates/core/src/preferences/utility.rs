use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Concave increasing felicity `u` on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Utility {
    /// `u(c) = c^exponent / exponent` with `exponent < 1`, nonzero.
    Power { exponent: f64 },
    /// `u(c) = ln c`.
    Log,
    /// `u(c) = -exp(-rate c) / rate`.
    Exponential { rate: f64 },
    /// `u(c) = intercept + sum_i slopes[i] * |[k_{i-1}, k_i] ∩ [0, c]|` with
    /// `k_{-1} = 0`, `k_len = inf`. Slopes must be nonnegative and
    /// nonincreasing; `slopes = [0]` is the constant stub.
    PiecewiseLinear { intercept: f64, kinks: Vec<f64>, slopes: Vec<f64> },
}

impl Utility {
    pub fn validate(&self) -> Result<()> {
        match self {
            Utility::Power { exponent } => {
                if !(exponent.is_finite() && *exponent < 1.0 && *exponent != 0.0) {
                    return Err(Error::InvalidPreferences(format!("power exponent must be < 1 and nonzero, got {exponent}")));
                }
            }
            Utility::Log => {}
            Utility::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidPreferences(format!("exponential rate must be positive, got {rate}")));
                }
            }
            Utility::PiecewiseLinear { intercept, kinks, slopes } => {
                if slopes.len() != kinks.len() + 1 || !intercept.is_finite() {
                    return Err(Error::InvalidPreferences("piecewise-linear utility needs one more slope than kinks".into()));
                }
                if kinks.iter().any(|k| !(*k > 0.0)) || kinks.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPreferences("kinks must be positive and increasing".into()));
                }
                if slopes.iter().any(|s| !(*s >= 0.0)) || slopes.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidPreferences("slopes must be nonnegative and nonincreasing".into()));
                }
            }
        }
        Ok(())
    }

    /// `u(c)`; `-inf` for negative consumption and at the singularities.
    pub fn value(&self, c: f64) -> f64 {
        if c < 0.0 || c.is_nan() {
            return f64::NEG_INFINITY;
        }
        match self {
            Utility::Power { exponent } => {
                if c == 0.0 {
                    if *exponent < 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                } else {
                    libm::pow(c, *exponent) / exponent
                }
            }
            Utility::Log => {
                if c == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    libm::log(c)
                }
            }
            Utility::Exponential { rate } => -libm::exp(-rate * c) / rate,
            Utility::PiecewiseLinear { intercept, kinks, slopes } => {
                let mut total = *intercept;
                let mut left = 0.0;
                for (i, s) in slopes.iter().enumerate() {
                    let right = kinks.get(i).copied().unwrap_or(f64::INFINITY);
                    if c <= left {
                        break;
                    }
                    total += s * (c.min(right) - left);
                    left = right;
                }
                total
            }
        }
    }

    /// `u'(c)` (right derivative for the piecewise-linear family).
    pub fn marginal(&self, c: f64) -> f64 {
        match self {
            Utility::Power { exponent } => libm::pow(c, exponent - 1.0),
            Utility::Log => 1.0 / c,
            Utility::Exponential { rate } => libm::exp(-rate * c),
            Utility::PiecewiseLinear { kinks, slopes, .. } => {
                let i = kinks.iter().position(|&k| c < k).unwrap_or(kinks.len());
                slopes[i]
            }
        }
    }

    /// Smallest `c >= 0` with `u'(c) <= y`, for strictly concave families.
    pub fn inverse_marginal(&self, y: f64) -> Option<f64> {
        match self {
            Utility::Power { exponent } => Some(libm::pow(y, 1.0 / (exponent - 1.0))),
            Utility::Log => Some(1.0 / y),
            Utility::Exponential { rate } => Some((-libm::log(y) / rate).max(0.0)),
            Utility::PiecewiseLinear { .. } => None,
        }
    }

    pub fn is_strictly_concave(&self) -> bool {
        !matches!(self, Utility::PiecewiseLinear { .. })
    }

    /// True when `u(0) = -inf`.
    pub fn singular_at_zero(&self) -> bool {
        matches!(self, Utility::Log) || matches!(self, Utility::Power { exponent } if *exponent < 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn zero_conventions() {
        assert_eq!(Utility::Log.value(0.0), f64::NEG_INFINITY);
        assert_eq!(Utility::Power { exponent: -2.0 }.value(0.0), f64::NEG_INFINITY);
        assert_eq!(Utility::Power { exponent: 0.5 }.value(0.0), 0.0);
        assert_relative_eq!(Utility::Exponential { rate: 2.0 }.value(0.0), -0.5);
        assert_eq!(Utility::Log.value(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn piecewise_linear_pieces() {
        let u = Utility::PiecewiseLinear { intercept: 1.0, kinks: vec![1.0, 3.0], slopes: vec![2.0, 1.0, 0.5] };
        u.validate().unwrap();
        assert_relative_eq!(u.value(0.5), 2.0);
        assert_relative_eq!(u.value(2.0), 4.0);
        assert_relative_eq!(u.value(5.0), 6.0);
        assert_eq!(u.marginal(2.0), 1.0);
        let stub = Utility::PiecewiseLinear { intercept: 0.0, kinks: vec![], slopes: vec![0.0] };
        assert_eq!(stub.value(7.0), 0.0);
        let convex = Utility::PiecewiseLinear { intercept: 0.0, kinks: vec![1.0], slopes: vec![1.0, 2.0] };
        assert!(convex.validate().is_err());
    }

    #[test]
    fn inverse_marginal_round_trips() {
        for u in [Utility::Power { exponent: -1.5 }, Utility::Power { exponent: 0.3 }, Utility::Log, Utility::Exponential { rate: 0.7 }] {
            let c = 1.7;
            assert_relative_eq!(u.inverse_marginal(u.marginal(c)).unwrap(), c, max_relative = 1e-12);
        }
    }
}
