//! Mortality on the consumption grid: death-mass tables, survivor-count
//! simulation and the survivor-bound machinery used to transfer strategies
//! from infinite to finite collectives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, streams};
use crate::{Error, Result, TimeGrid};

/// Parametric or explicit description of the time-of-death distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MortalityLaw {
    /// Equal death mass at every grid point.
    Uniform,
    /// Hazard `a + b exp(c t)`, truncated at the horizon and renormalised.
    GompertzMakeham { a: f64, b: f64, c: f64 },
    /// Death certain at one grid time.
    PointMass { time: f64 },
    /// Death density `p_t` per grid point (against the grid measure).
    Explicit { density: Vec<f64> },
}

/// Death density `p_t` on the grid with `sum_t p_t dt = 1`, distribution
/// `F(t) = sum_{s < t} p_s dt` and survival fraction `pi_t = 1 - F(t)`,
/// the probability that the time of death is at or after `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityTable {
    grid: TimeGrid,
    density: Vec<f64>,
    survival: Vec<f64>,
}

impl MortalityTable {
    pub fn new(law: &MortalityLaw, grid: TimeGrid) -> Result<Self> {
        let m = grid.len();
        let dt = grid.step();
        let masses: Vec<f64> = match law {
            MortalityLaw::Uniform => vec![1.0 / m as f64; m],
            MortalityLaw::PointMass { time } => {
                let idx = grid
                    .index_of(*time)
                    .filter(|&i| i < m)
                    .ok_or_else(|| Error::InvalidMortality(format!("point mass at {time} is not a grid point")))?;
                let mut v = vec![0.0; m];
                v[idx] = 1.0;
                v
            }
            MortalityLaw::GompertzMakeham { a, b, c } => {
                if !(*a >= 0.0 && *b > 0.0 && *c > 0.0) {
                    return Err(Error::InvalidMortality(format!(
                        "Gompertz–Makeham needs a >= 0, b > 0, c > 0 (got {a}, {b}, {c})"
                    )));
                }
                let s = |t: f64| libm::exp(-a * t - (b / c) * libm::expm1(c * t));
                let tail = s(grid.horizon());
                let norm = 1.0 - tail;
                (0..m).map(|i| (s(grid.time(i)) - s(grid.time(i + 1))) / norm).collect()
            }
            MortalityLaw::Explicit { density } => {
                if density.len() != m {
                    return Err(Error::InvalidMortality(format!(
                        "explicit table has {} entries, grid has {m}",
                        density.len()
                    )));
                }
                if let Some((i, v)) = density.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                    return Err(Error::InvalidMortality(format!("negative death mass {v} at index {i}")));
                }
                let total: f64 = density.iter().map(|p| p * dt).sum();
                if libm::fabs(total - 1.0) > 1e-6 {
                    return Err(Error::InvalidMortality(format!("death masses sum to {total}, expected 1")));
                }
                density.iter().map(|p| p * dt / total).collect()
            }
        };
        Self::from_masses(grid, masses)
    }

    fn from_masses(grid: TimeGrid, masses: Vec<f64>) -> Result<Self> {
        let dt = grid.step();
        let mut survival = Vec::with_capacity(masses.len() + 1);
        let mut remaining = 1.0;
        survival.push(1.0);
        let last = masses.len() - 1;
        for (i, q) in masses.iter().enumerate() {
            remaining -= q;
            survival.push(if i == last { 0.0 } else { remaining.max(0.0) });
        }
        let density = masses.iter().map(|q| q / dt).collect();
        Ok(Self { grid, density, survival })
    }

    /// Table in which nobody dies before the last grid point.
    pub fn no_early_deaths(grid: TimeGrid) -> Self {
        Self::new(&MortalityLaw::PointMass { time: grid.time(grid.len() - 1) }, grid).expect("last grid point")
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Density `p_t` at grid index `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.density[i]
    }

    /// Probability `p_t dt` of dying at grid index `i`.
    pub fn death_mass(&self, i: usize) -> f64 {
        self.density[i] * self.grid.step()
    }

    /// `F(t_i) = P(tau < t_i)`.
    pub fn distribution(&self, i: usize) -> f64 {
        1.0 - self.survival[i]
    }

    /// `pi_i = P(tau >= t_i)`, for `i` in `0..=m` (`pi_m = 0`).
    pub fn survival(&self, i: usize) -> f64 {
        self.survival[i]
    }

    pub fn survival_curve(&self) -> &[f64] {
        &self.survival
    }

    /// Probability of dying at `t_i` given alive at `t_i`.
    pub fn conditional_death(&self, i: usize) -> f64 {
        if self.survival[i] <= 0.0 {
            1.0
        } else {
            (1.0 - self.survival[i + 1] / self.survival[i]).clamp(0.0, 1.0)
        }
    }

    /// `sum_t pi_t dt`, the annuity factor at zero interest.
    pub fn expected_grid_lifetime(&self) -> f64 {
        self.survival[..self.grid.len()].iter().sum::<f64>() * self.grid.step()
    }

    /// First grid index by which death is certain (`pi = 0`).
    pub fn certain_death_index(&self) -> usize {
        self.survival.iter().position(|&p| p <= 0.0).unwrap_or(self.grid.len())
    }

    /// Samples a grid index of death by inverting the distribution.
    pub fn sample_death<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for i in 0..self.grid.len() {
            acc += self.death_mass(i);
            if u < acc {
                return i;
            }
        }
        self.grid.len() - 1
    }
}

/// Survivor counts `n_t` (time of death `>= t`) at each grid point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivorPath {
    pub initial: u64,
    pub seed: u64,
    pub index: u64,
    pub counts: Vec<u64>,
}

impl SurvivorPath {
    pub fn at(&self, t: usize) -> u64 {
        self.counts[t]
    }
}

/// Simulates survivor counts by binomial thinning with the exact conditional
/// death probabilities of the table.
pub fn simulate_survivors(n: u64, table: &MortalityTable, seed: u64) -> Result<SurvivorPath> {
    simulate_survivors_indexed(n, table, seed, 0)
}

/// As [`simulate_survivors`], drawing from trial stream `index`.
pub fn simulate_survivors_indexed(n: u64, table: &MortalityTable, seed: u64, index: u64) -> Result<SurvivorPath> {
    if n == 0 {
        return Err(Error::InvalidMortality("a collective needs at least one member".into()));
    }
    let mut rng = stream(seed, streams::MORTALITY, index);
    let counts = sample_counts(n, table, table.grid().len(), &mut rng);
    Ok(SurvivorPath { initial: n, seed, index, counts })
}

pub(crate) fn sample_counts<R: Rng + ?Sized>(n: u64, table: &MortalityTable, points: usize, rng: &mut R) -> Vec<u64> {
    let mut counts = Vec::with_capacity(points);
    let mut alive = n;
    counts.push(alive);
    for i in 0..points.saturating_sub(1) {
        let d = table.conditional_death(i);
        let deaths = if alive == 0 || d <= 0.0 {
            0
        } else if d >= 1.0 {
            alive
        } else {
            Binomial::new(alive, d).expect("valid probability").sample(rng)
        };
        alive -= deaths;
        counts.push(alive);
    }
    counts
}

const BOUND_SLACK: f64 = 1e-12;

/// The survivor-bound event: `n_s <= n pi_s / lambda` for every grid index
/// `s <= up_to`.
pub fn survivor_bound_event(path: &SurvivorPath, table: &MortalityTable, lambda: f64, up_to: usize) -> Result<bool> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain { what: "survivor bound lambda in (0, 1]", value: lambda });
    }
    let n = path.initial as f64;
    Ok(path.counts[..=up_to.min(path.counts.len() - 1)]
        .iter()
        .enumerate()
        .all(|(s, &k)| within_bound(k, n * table.survival(s) / lambda)))
}

#[inline]
pub(crate) fn within_bound(count: u64, bound: f64) -> bool {
    count as f64 <= bound * (1.0 + BOUND_SLACK) + BOUND_SLACK
}

/// Monte Carlo estimate `(probability, standard error)` of the survivor-bound
/// event over `trials` independent collectives.
pub fn survivor_bound_probability(
    n: u64,
    table: &MortalityTable,
    lambda: f64,
    up_to: usize,
    trials: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut hits = 0u64;
    for trial in 0..trials {
        let path = simulate_survivors_indexed(n, table, seed, trial)?;
        if survivor_bound_event(&path, table, lambda, up_to)? {
            hits += 1;
        }
    }
    Ok(proportion(hits, trials))
}

/// Exact probability of the survivor-bound event up to `up_to`, by forward
/// induction over binomial survivor counts.
pub fn survivor_bound_exact(n: u64, table: &MortalityTable, lambda: f64, up_to: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain { what: "survivor bound lambda in (0, 1]", value: lambda });
    }
    if n == 0 {
        return Err(Error::InvalidMortality("a collective needs at least one member".into()));
    }
    let last = up_to.min(table.grid().len() - 1);
    let nf = n as f64;
    // mass[k - lo] = P(n_s = k, bound held so far)
    let mut lo = n;
    let mut mass = vec![1.0];
    if !within_bound(n, nf * table.survival(0) / lambda) {
        return Ok(0.0);
    }
    for s in 0..last {
        let d = table.conditional_death(s);
        let bound = nf * table.survival(s + 1) / lambda;
        let hi = lo + mass.len() as u64 - 1;
        let mut next = vec![0.0; (hi + 1) as usize];
        for (i, &w) in mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let k = lo + i as u64;
            let (first, probs) = crate::math::binomial_pmf(k, 1.0 - d, 1e-18);
            for (q, p) in probs.iter().enumerate() {
                let k2 = first + q as u64;
                if within_bound(k2, bound) {
                    next[k2 as usize] += w * p;
                }
            }
        }
        lo = 0;
        mass = next;
    }
    Ok(mass.iter().sum())
}

fn proportion(hits: u64, trials: u64) -> (f64, f64) {
    let p = hits as f64 / trials as f64;
    (p, libm::sqrt(p * (1.0 - p) / trials as f64))
}

/// Finite set of grid indices `t_1 > t_2 > ... > 0` below `t0` at which the
/// expected survivor count grows by at most `1 / (1 - eps)` per step, defined
/// by `t_i = inf { t : t = 0 or pi_t <= pi_{t_{i-1}} / (1 - eps) }`.
///
/// On a grid the infimum can fail to move when `pi` drops by more than the
/// ratio in a single step; the next lower grid point is taken instead, and
/// if this happens at the first step `t0` itself is included.
pub fn finite_time_points(table: &MortalityTable, t0: usize, eps: f64) -> Result<Vec<usize>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain { what: "epsilon in (0, 1)", value: eps });
    }
    if t0 >= table.grid().len() || table.survival(t0) <= 0.0 {
        return Err(Error::Domain { what: "t0 before the certain-death time", value: table.grid().time(t0) });
    }
    let mut points = Vec::new();
    let mut prev = t0;
    while prev > 0 {
        let cap = table.survival(prev) / (1.0 - eps);
        let mut next = (0..=prev).find(|&i| table.survival(i) <= cap).unwrap_or(prev);
        if next == prev {
            if points.is_empty() {
                points.push(t0);
            }
            next = prev - 1;
        }
        points.push(next);
        prev = next;
    }
    if points.is_empty() {
        points.push(0);
    }
    Ok(points)
}

/// Monte Carlo estimates of both sides of the finite-time-point bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointBound {
    pub points: Vec<usize>,
    /// `P(n_t <= (1 - eps)^-2 E n_t for all grid t <= t0)`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `P(n_{t_i} <= (1 - eps)^-1 E n_{t_i} for all t_i)`.
    pub rhs: f64,
    pub rhs_se: f64,
    pub violation: bool,
}

pub fn check_time_point_bound(
    n: u64,
    table: &MortalityTable,
    t0: usize,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<TimePointBound> {
    let points = finite_time_points(table, t0, eps)?;
    let inner = 1.0 / (1.0 - eps);
    let outer = inner * inner;
    let nf = n as f64;
    let (mut lhs_hits, mut rhs_hits) = (0u64, 0u64);
    for trial in 0..trials {
        let mut rng = stream(seed, streams::MORTALITY, trial);
        let counts = sample_counts(n, table, t0 + 1, &mut rng);
        if counts.iter().enumerate().all(|(t, &k)| within_bound(k, outer * nf * table.survival(t))) {
            lhs_hits += 1;
        }
        if points.iter().all(|&t| within_bound(counts[t], inner * nf * table.survival(t))) {
            rhs_hits += 1;
        }
    }
    let (lhs, lhs_se) = proportion(lhs_hits, trials);
    let (rhs, rhs_se) = proportion(rhs_hits, trials);
    let combined = libm::sqrt(lhs_se * lhs_se + rhs_se * rhs_se);
    Ok(TimePointBound { points, lhs, lhs_se, rhs, rhs_se, violation: lhs < rhs - 3.0 * combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(dt: f64, t: f64) -> TimeGrid {
        TimeGrid::new(dt, t).unwrap()
    }

    #[test]
    fn uniform_quarterly_table() {
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid(0.25, 1.0)).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(table.density(i), 1.0, epsilon = 1e-15);
        }
        let pi: Vec<f64> = (0..4).map(|i| table.survival(i)).collect();
        for (a, b) in pi.iter().zip([1.0, 0.75, 0.5, 0.25]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(table.survival(4), 0.0);
    }

    #[test]
    fn point_mass_at_last_point_has_no_early_deaths() {
        let g = grid(1.0, 10.0);
        let table = MortalityTable::no_early_deaths(g);
        for i in 0..10 {
            assert_eq!(table.survival(i), 1.0);
        }
        let path = simulate_survivors(25, &table, 9).unwrap();
        assert!(path.counts.iter().all(|&k| k == 25));
    }

    #[test]
    fn rejects_bad_tables() {
        let g = grid(1.0, 3.0);
        let neg = MortalityLaw::Explicit { density: vec![0.5, 0.7, -0.2] };
        assert!(matches!(MortalityTable::new(&neg, g), Err(Error::InvalidMortality(_))));
        let short = MortalityLaw::Explicit { density: vec![0.5, 0.7, 0.2] };
        assert!(MortalityTable::new(&short, g).is_err());
        assert!(MortalityTable::new(&MortalityLaw::PointMass { time: 3.0 }, g).is_err());
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid(1.0, 20.0)).unwrap();
        let a = simulate_survivors(500, &table, 77).unwrap();
        let b = simulate_survivors(500, &table, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.counts.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bound_event_strict_threshold() {
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid(1.0, 4.0)).unwrap();
        let path = SurvivorPath { initial: 4, seed: 0, index: 0, counts: vec![4, 3, 2, 1] };
        assert!(survivor_bound_event(&path, &table, 1.0, 3).unwrap());
        let over = SurvivorPath { counts: vec![4, 4, 2, 1], ..path };
        assert!(!survivor_bound_event(&over, &table, 1.0, 3).unwrap());
        assert!(survivor_bound_event(&over, &table, 0.75, 3).unwrap());
        assert!(survivor_bound_event(&over, &table, 0.0, 3).is_err());
    }

    #[test]
    fn time_points_for_linear_survival() {
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid(0.25, 1.0)).unwrap();
        assert_eq!(finite_time_points(&table, 3, 0.5).unwrap(), vec![2, 0]);
        let none = MortalityTable::no_early_deaths(grid(0.25, 1.0));
        assert_eq!(finite_time_points(&none, 2, 0.3).unwrap(), vec![0]);
        assert!(finite_time_points(&table, 4, 0.5).is_err());
    }
}
