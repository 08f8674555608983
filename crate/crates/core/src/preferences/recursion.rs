use super::{EzParams, GainFunction, Utility};

/// One-step backward recursion of a gain function, written in "linear" units
/// `L` in which conditional expectations are taken:
///
/// * von Neumann–Morgenstern: `L = V`, `L_t = dt e^{-bt} u(gamma) + E[L']`;
/// * exponential Kihlstrom–Mirman: `L = G = -V`, `L_t = e^{-u(gamma) dt} E[L']`;
/// * Epstein–Zin: `L = C^alpha = alpha V`, with the Kreps–Porteus step
///   `C_t = [(1 - beta) gamma^rho + beta M^rho]^{1/rho}`, `M = E[L']^{1/alpha}`
///   and `beta = e^{-b dt}`.
///
/// After death the linear value is the constant [`Recursion::death`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recursion {
    kind: Kind,
    dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Vnm { utility: Utility, discount: f64 },
    ExpKm { utility: Utility },
    Ez { alpha: f64, rho: f64, beta: f64, adequacy: f64 },
}

impl Recursion {
    pub fn new(gain: &GainFunction, dt: f64) -> Self {
        let kind = match gain {
            GainFunction::Vnm(p) => Kind::Vnm { utility: p.utility.clone(), discount: p.discount },
            GainFunction::ExpKm(p) => Kind::ExpKm { utility: p.utility.clone() },
            GainFunction::EpsteinZin(p) => Self::ez_kind(p, dt),
        };
        Self { kind, dt }
    }

    fn ez_kind(p: &EzParams, dt: f64) -> Kind {
        Kind::Ez { alpha: p.alpha, rho: p.rho, beta: libm::exp(-p.discount * dt), adequacy: p.adequacy }
    }

    /// Kreps–Porteus recursion without the Epstein–Zin parameter restrictions,
    /// used to compare against the expected-utility special case `rho = alpha`.
    #[doc(hidden)]
    pub fn kreps_porteus_unchecked(alpha: f64, rho: f64, discount: f64, adequacy: f64, dt: f64) -> Self {
        let kind = Kind::Ez { alpha, rho, beta: libm::exp(-discount * dt), adequacy };
        Self { kind, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_epstein_zin(&self) -> bool {
        matches!(self.kind, Kind::Ez { .. })
    }

    /// Linear value after death (and at the horizon).
    pub fn death(&self) -> f64 {
        match &self.kind {
            Kind::Vnm { .. } => 0.0,
            Kind::ExpKm { .. } => 1.0,
            Kind::Ez { alpha, adequacy, .. } => libm::pow(*adequacy, *alpha),
        }
    }

    /// Gain value of a linear value.
    pub fn value(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Vnm { .. } => l,
            Kind::ExpKm { .. } => -l,
            Kind::Ez { alpha, .. } => l / alpha,
        }
    }

    /// Inverse of [`Recursion::value`].
    pub fn linear(&self, v: f64) -> f64 {
        match &self.kind {
            Kind::Vnm { .. } => v,
            Kind::ExpKm { .. } => -v,
            Kind::Ez { alpha, .. } => v * alpha,
        }
    }

    /// `+1` if the gain increases with `L`, `-1` if it decreases.
    pub fn orientation(&self) -> f64 {
        match &self.kind {
            Kind::Vnm { .. } => 1.0,
            Kind::ExpKm { .. } | Kind::Ez { .. } => -1.0,
        }
    }

    /// `L_t` from consumption rate `gamma` at time `t` and `E[L']`, the
    /// expected linear continuation (death branch included).
    pub fn step(&self, t: f64, gamma: f64, expected: f64) -> f64 {
        match &self.kind {
            Kind::Vnm { utility, discount } => self.dt * libm::exp(-discount * t) * utility.value(gamma) + expected,
            Kind::ExpKm { utility } => libm::exp(-utility.value(gamma) * self.dt) * expected,
            Kind::Ez { alpha, rho, beta, .. } => {
                let x = kp_inner(*alpha, *rho, *beta, gamma, expected);
                libm::pow(x, alpha / rho)
            }
        }
    }

    /// `(L, dL/dgamma, dL/dE)`.
    pub fn step_partials(&self, t: f64, gamma: f64, expected: f64) -> (f64, f64, f64) {
        match &self.kind {
            Kind::Vnm { utility, discount } => {
                let w = self.dt * libm::exp(-discount * t);
                (w * utility.value(gamma) + expected, w * utility.marginal(gamma), 1.0)
            }
            Kind::ExpKm { utility } => {
                let g = libm::exp(-utility.value(gamma) * self.dt);
                (g * expected, -utility.marginal(gamma) * self.dt * g * expected, g)
            }
            Kind::Ez { alpha, rho, beta, .. } => {
                let (a, r, b) = (*alpha, *rho, *beta);
                let m = libm::pow(expected, 1.0 / a);
                let x = (1.0 - b) * libm::pow(gamma, r) + b * libm::pow(m, r);
                let l = libm::pow(x, a / r);
                let dl_dx = (a / r) * l / x;
                let dx_dg = (1.0 - b) * r * libm::pow(gamma, r - 1.0);
                let dx_dm = b * r * libm::pow(m, r - 1.0);
                let dm_de = m / (a * expected);
                (l, dl_dx * dx_dg, dl_dx * dx_dm * dm_de)
            }
        }
    }

    /// Marginal-utility shape `phi(gamma)` such that `dL/dgamma` equals a
    /// consumption-independent factor times `phi`:
    /// `u'` for the additive families, `gamma^{rho - 1}` for Epstein–Zin.
    pub fn marginal_shape(&self, gamma: f64) -> f64 {
        match &self.kind {
            Kind::Vnm { utility, .. } | Kind::ExpKm { utility } => utility.marginal(gamma),
            Kind::Ez { rho, .. } => libm::pow(gamma, rho - 1.0),
        }
    }

    /// Inverse of [`Recursion::marginal_shape`] (clamped at zero).
    pub fn inverse_marginal_shape(&self, y: f64) -> Option<f64> {
        match &self.kind {
            Kind::Vnm { utility, .. } | Kind::ExpKm { utility } => utility.inverse_marginal(y),
            Kind::Ez { rho, .. } => Some(libm::pow(y, 1.0 / (rho - 1.0))),
        }
    }
}

#[inline]
fn kp_inner(alpha: f64, rho: f64, beta: f64, gamma: f64, expected: f64) -> f64 {
    let m = libm::pow(expected, 1.0 / alpha);
    (1.0 - beta) * libm::pow(gamma, rho) + beta * libm::pow(m, rho)
}
