//! Truncated BSDE drivers for Epstein–Zin utility and their monotone limit.
//!
//! With `Vt = alpha e^{-b alpha t / rho} V`, the utility solves
//! `dVt = F(t, gamma, Vt) 1_{t <= tau} dt + martingale` with
//! `F = (b alpha / rho) e^{-bt} gamma^rho Vt^{1 - rho/alpha} <= 0`. Truncating
//! `gamma^rho` and `Vt` at `m` gives Lipschitz drivers whose solutions
//! decrease to the untruncated one. Everything is discretised on an
//! [`AliveChain`] by implicit Euler.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::market::{Lattice, NodeField};
use crate::mortality::{survivor_bound_exact, MortalityTable};
use crate::optimizer::TransferChain;
use crate::preferences::{ez_utility_discrete, AliveChain, EzParams, LatticeChain};
use crate::{Error, Result};

/// `F^m` for one parameter set. `level = f64::INFINITY` is the untruncated
/// driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDriver {
    pub params: EzParams,
    pub level: f64,
}

impl TruncatedDriver {
    pub fn new(params: EzParams, level: f64) -> Result<Self> {
        params.validate()?;
        if !(level >= 0.0) {
            return Err(Error::Domain { what: "truncation level m >= 0", value: level });
        }
        Ok(Self { params, level })
    }

    fn exponent(&self) -> f64 {
        1.0 - self.params.rho / self.params.alpha
    }

    /// `F^m(t, gamma, v)`.
    pub fn value(&self, t: f64, gamma: f64, v: f64) -> f64 {
        -self.coefficient(t, gamma) * libm::pow(v.max(0.0).min(self.level), self.exponent())
    }

    /// `K` with `F^m = -K (v ^ m)^p`.
    fn coefficient(&self, t: f64, gamma: f64) -> f64 {
        let p = &self.params;
        let g = libm::pow(gamma, p.rho).min(self.level);
        p.discount * libm::fabs(p.alpha) / p.rho * libm::exp(-p.discount * t) * g
    }

    /// `Vt` of a value `V`, at time `t`.
    pub fn transform(&self, t: f64, v: f64) -> f64 {
        let p = &self.params;
        p.alpha * libm::exp(-p.discount * p.alpha * t / p.rho) * v
    }

    /// Value after death (and at the horizon) at time `t`, transformed.
    pub fn terminal(&self, t: f64) -> f64 {
        self.transform(t, self.params.terminal())
    }
}

/// `C_m = (1 - rho/alpha) b (|alpha|/rho) m^{1 - rho/alpha}`.
pub fn lipschitz_constant(params: &EzParams, m: f64) -> Result<f64> {
    params.validate()?;
    if !(m > 0.0) {
        return Err(Error::Domain { what: "truncation level m > 0", value: m });
    }
    let p = 1.0 - params.rho / params.alpha;
    Ok(p * params.discount * libm::fabs(params.alpha) / params.rho * libm::pow(m, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdeOptions {
    /// Refuse steps with `C_m dt >= 1`, where the fixed-point map stops
    /// being a contraction. The per-node solve is a safeguarded Newton
    /// iteration on a monotone equation and stays exact beyond that bound.
    pub require_contraction: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        Self { require_contraction: true, max_iterations: 50, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub level: f64,
    pub dt: f64,
    /// `Vt` in every chain state, by grid index.
    pub values: Vec<Vec<f64>>,
    pub initial: f64,
    /// Most iterations any node needed.
    pub max_iterations: usize,
}

impl BsdeSolution {
    /// Back-transformed Epstein–Zin value `EZ^m = Vt_0 / alpha`.
    pub fn utility(&self, params: &EzParams) -> f64 {
        self.initial / params.alpha
    }
}

/// Root of `x + dt K (x ^ m)^p = c` on `[0, c]`.
fn implicit_node(c: f64, k: f64, p: f64, m: f64, dt: f64, options: &BsdeOptions) -> Result<(f64, usize)> {
    if c <= 0.0 || k == 0.0 {
        return Ok((c.max(0.0), 0));
    }
    let g = |x: f64| x + dt * k * libm::pow(x.min(m), p) - c;
    let (mut lo, mut hi) = (0.0, c);
    let mut x = c;
    for it in 1..=options.max_iterations.max(1) {
        let fx = g(x);
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 1.0 + if x < m { dt * k * p * libm::pow(x, p - 1.0) } else { 0.0 };
        let mut next = x - fx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if libm::fabs(next - x) <= options.tolerance * c.max(1e-300) || hi - lo <= options.tolerance * c {
            return Ok((next, it));
        }
        x = next;
    }
    Err(Error::NoConvergence("implicit BSDE step".into()))
}

/// Implicit Euler for the truncated BSDE on an alive chain:
/// `Vt_t = E_t[Vt_{t+dt}] + F^m(t, gamma_t, Vt_t) dt`, with the transformed
/// adequacy value on death and at the horizon.
pub fn solve_truncated<C: AliveChain>(driver: &TruncatedDriver, chain: &C, options: &BsdeOptions) -> Result<BsdeSolution> {
    driver.params.validate()?;
    let grid = chain.grid();
    let dt = grid.step();
    let m = grid.len();
    if options.require_contraction && driver.level.is_finite() && driver.level > 0.0 {
        let cm = lipschitz_constant(&driver.params, driver.level)? * dt;
        if cm >= 1.0 {
            return Err(Error::NotContractive(cm));
        }
    }
    let p = driver.exponent();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut buf = Vec::new();
    let mut worst = 0;
    for t in (0..m).rev() {
        let time = grid.time(t);
        let dead = driver.terminal(grid.time(t + 1));
        let mut here = Vec::with_capacity(chain.states(t));
        for s in 0..chain.states(t) {
            let gamma = chain.consumption(t, s);
            if !(gamma >= 0.0) {
                return Err(Error::NegativeCashflow { t, node: s, value: gamma });
            }
            let d = if t + 1 == m { 1.0 } else { chain.death_probability(t, s) };
            let mut e = d * dead;
            if d < 1.0 {
                chain.successors(t, s, &mut buf);
                let cont: f64 = buf.iter().filter(|(_, q)| *q > 0.0).map(|&(s2, q)| q * values[t + 1][s2]).sum();
                e += (1.0 - d) * cont;
            }
            let (x, it) = implicit_node(e, driver.coefficient(time, gamma), p, driver.level, dt, options)?;
            worst = worst.max(it);
            here.push(x);
        }
        values[t] = here;
    }
    let initial = values[0][0];
    Ok(BsdeSolution { level: driver.level, dt, values, initial, max_iterations: worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub level: f64,
    pub transformed: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationTable {
    pub rows: Vec<TruncationRow>,
    /// Discrete Epstein–Zin utility of the same stream.
    pub limit: f64,
}

impl TruncationTable {
    /// `Vt^m_0` nonincreasing and `EZ^m` nondecreasing in `m`.
    pub fn monotone(&self, tolerance: f64) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].transformed <= w[0].transformed + tolerance && w[1].utility >= w[0].utility - tolerance
        })
    }
}

/// `Vt^m_0` and `EZ^m` for each truncation level (sorted increasingly) on
/// the lattice-with-death chain, with the discrete Epstein–Zin value.
pub fn convergence_in_m(
    params: &EzParams,
    consumption: &NodeField,
    table: &MortalityTable,
    lattice: &Lattice,
    levels: &[f64],
    options: &BsdeOptions,
) -> Result<TruncationTable> {
    let chain = LatticeChain::new(lattice, table, consumption)?;
    let mut levels = levels.to_vec();
    if levels.iter().any(|l| l.is_nan()) {
        return Err(Error::Domain { what: "truncation level", value: f64::NAN });
    }
    levels.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(levels.len());
    for &level in &levels {
        let sol = solve_truncated(&TruncatedDriver::new(*params, level)?, &chain, options)?;
        rows.push(TruncationRow { level, transformed: sol.initial, utility: sol.utility(params) });
    }
    let limit = ez_utility_discrete(params, consumption, table, lattice)?;
    Ok(TruncationTable { rows, limit })
}

/// Inputs and both sides of the error bound
/// `|Vt^{m,inf}_0 - Vt^{m,n}_0|^2 <= Ct_m (T P(not G_{n, T - delta}) + delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub level: f64,
    pub n: u64,
    pub delta: f64,
    pub infinite: f64,
    pub finite: f64,
    pub bound_failure: f64,
    pub constant: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `Ct_m = eta_m (b |alpha| m^{2 - rho/alpha} / rho) e^{beta_m T}` with
/// `eta_m = 1 / C_m^2` and `beta_m = 3 C_m^2 + 2 C_m`.
pub fn error_constant(params: &EzParams, m: f64, horizon: f64) -> Result<f64> {
    let c = lipschitz_constant(params, m)?;
    let eta = 1.0 / (c * c);
    let beta = 3.0 * c * c + 2.0 * c;
    let p = 2.0 - params.rho / params.alpha;
    Ok(eta * params.discount * libm::fabs(params.alpha) * libm::pow(m, p) / params.rho * libm::exp(beta * horizon))
}

/// Compares the truncated solutions for `lambda gamma` in the infinite
/// collective and for the transferred stream in a collective of size `n`.
#[allow(clippy::too_many_arguments)]
pub fn check_error_bound(
    params: &EzParams,
    gamma: &NodeField,
    table: &MortalityTable,
    lattice: &Lattice,
    lambda: f64,
    n: u64,
    level: f64,
    delta: f64,
    options: &BsdeOptions,
) -> Result<ErrorBound> {
    let grid = lattice.grid();
    let horizon = grid.horizon();
    if !(delta > 0.0 && delta <= horizon) {
        return Err(Error::Domain { what: "error-bound delta in (0, T]", value: delta });
    }
    let driver = TruncatedDriver::new(*params, level)?;
    let scaled = gamma.scale(lambda);
    let infinite = solve_truncated(&driver, &LatticeChain::new(lattice, table, &scaled)?, options)?.initial;
    let finite = solve_truncated(&driver, &TransferChain::new(lattice, table, gamma, lambda, n)?, options)?.initial;
    // last grid index at or before T - delta
    let steps = libm::floor((horizon - delta) / grid.step() + 1e-9).max(0.0) as usize;
    let up_to = steps.min(grid.len() - 1);
    let bound_failure = 1.0 - survivor_bound_exact(n, table, lambda, up_to)?;
    let constant = error_constant(params, level, horizon)?;
    let lhs = (infinite - finite) * (infinite - finite);
    let rhs = constant * (horizon * bound_failure + delta);
    Ok(ErrorBound { level, n, delta, infinite, finite, bound_failure, constant, lhs, rhs, holds: lhs <= rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mortality::MortalityLaw;
    use crate::preferences::DeterministicChain;
    use crate::TimeGrid;
    use approx::assert_relative_eq;

    fn params() -> EzParams {
        EzParams::new(-1.0, 0.5, 0.1, 0.5).unwrap()
    }

    #[test]
    fn lipschitz_constant_formula() {
        assert_relative_eq!(lipschitz_constant(&params(), 1.0).unwrap(), 0.3, max_relative = 1e-15);
        let ratio = lipschitz_constant(&params(), 2.0).unwrap() / lipschitz_constant(&params(), 1.0).unwrap();
        assert_relative_eq!(ratio, libm::pow(2.0, 1.5), max_relative = 1e-14);
        assert!(lipschitz_constant(&params(), 1e-12).unwrap() < 1e-17);
        assert!(lipschitz_constant(&params(), 0.0).is_err());
    }

    #[test]
    fn zero_level_is_a_martingale() {
        let grid = TimeGrid::new(0.5, 5.0).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let stream = vec![0.7; grid.len()];
        let chain = DeterministicChain::new(&table, &stream).unwrap();
        let driver = TruncatedDriver::new(params(), 0.0).unwrap();
        let sol = solve_truncated(&driver, &chain, &BsdeOptions::default()).unwrap();
        // expected terminal value over the death time
        let expected: f64 = (0..grid.len()).map(|i| table.death_mass(i) * driver.terminal(grid.time(i + 1))).sum();
        assert_relative_eq!(sol.initial, expected, max_relative = 1e-12);
    }

    #[test]
    fn adequate_consumption_is_a_fixed_point() {
        let p = EzParams::new(-1.0, 0.5, 0.01, 0.5).unwrap();
        let grid = TimeGrid::new(0.001, 2.0).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let stream = vec![p.adequacy; grid.len()];
        let chain = DeterministicChain::new(&table, &stream).unwrap();
        let driver = TruncatedDriver::new(p, f64::INFINITY).unwrap();
        let sol = solve_truncated(&driver, &chain, &BsdeOptions::default()).unwrap();
        assert_relative_eq!(sol.utility(&p), p.terminal(), max_relative = 1e-6);
    }

    #[test]
    fn contraction_is_enforced_on_request() {
        let grid = TimeGrid::new(1.0, 4.0).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let stream = vec![0.7; grid.len()];
        let chain = DeterministicChain::new(&table, &stream).unwrap();
        let driver = TruncatedDriver::new(params(), 100.0).unwrap();
        assert!(matches!(solve_truncated(&driver, &chain, &BsdeOptions::default()), Err(Error::NotContractive(_))));
        let loose = BsdeOptions { require_contraction: false, ..BsdeOptions::default() };
        let sol = solve_truncated(&driver, &chain, &loose).unwrap();
        assert!(sol.values.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn implicit_node_solves_equation() {
        let opts = BsdeOptions::default();
        let (x, _) = implicit_node(2.0, 3.0, 1.5, f64::INFINITY, 0.1, &opts).unwrap();
        assert_relative_eq!(x + 0.3 * libm::pow(x, 1.5), 2.0, max_relative = 1e-12);
        let (x, _) = implicit_node(2.0, 3.0, 1.5, 0.5, 0.1, &opts).unwrap();
        assert_relative_eq!(x + 0.3 * libm::pow(0.5, 1.5), 2.0, max_relative = 1e-12);
    }
}
