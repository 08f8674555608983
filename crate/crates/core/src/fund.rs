//! Budget dynamics of collective funds.
//!
//! Consumption `gamma` is a rate: at each grid point a survivor withdraws
//! `gamma * dt`. Post-consumption wealth is invested in proportions of the
//! risky assets with the bond holding the remainder, so
//! `F_{t+1} = Fbar_t * (R_f + sum_j alpha_j (R_j - R_f))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::market::{Lattice, ScenarioSet};
use crate::mortality::{MortalityTable, SurvivorPath};
use crate::{Error, Result, TimeGrid};

/// What a strategy observes at a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundState {
    pub t: usize,
    /// Survivor count in a finite collective; `None` for infinite collectives.
    pub survivors: Option<u64>,
    /// `n_t / n`, or `pi_t` in the infinite collective.
    pub alive_fraction: f64,
    /// Pre-consumption wealth per original member (`F_t / n` or `Y_t`).
    pub wealth: f64,
    /// Market state: lattice up-moves so far, or the scenario path id.
    pub market: usize,
    /// Lattice move history as bits (bit `s` set for an up move over step
    /// `s`); zero off the lattice.
    pub history: u64,
}

impl FundState {
    pub fn wealth_per_survivor(&self) -> f64 {
        if self.alive_fraction > 0.0 {
            self.wealth / self.alive_fraction
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Consumption rate per survivor.
    pub consumption: f64,
    /// Fractions of post-consumption wealth held in each risky asset.
    pub allocation: Vec<f64>,
}

pub trait Strategy {
    fn decide(&self, state: &FundState) -> Decision;
}

/// Constant consumption rate with a fixed allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantStrategy {
    pub consumption: f64,
    pub allocation: Vec<f64>,
}

impl Strategy for ConstantStrategy {
    fn decide(&self, _state: &FundState) -> Decision {
        Decision { consumption: self.consumption, allocation: self.allocation.clone() }
    }
}

/// Realised market: per-step gross returns of the bond and risky assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPath {
    pub grid: TimeGrid,
    pub bond: Vec<f64>,
    pub risky: Vec<Vec<f64>>,
    pub states: Vec<usize>,
    pub history: Vec<u64>,
}

impl MarketPath {
    /// Path through the lattice given the up-move counts (length `m + 1`).
    pub fn from_lattice(lattice: &Lattice, ups: &[usize]) -> Result<Self> {
        let m = lattice.levels();
        if ups.len() != m + 1 || ups[0] != 0 || ups.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(Error::Shape("lattice path must start at 0 and move by at most one per step".into()));
        }
        let bond = vec![lattice.bond_growth(); m];
        let risky = ups.windows(2).map(|w| vec![lattice.risky_return(w[0], w[1])]).collect();
        let mut history = Vec::with_capacity(m);
        let mut bits = 0u64;
        for t in 0..m {
            history.push(bits);
            if t < 64 && ups[t + 1] > ups[t] {
                bits |= 1 << t;
            }
        }
        Ok(Self { grid: lattice.grid(), bond, risky, states: ups[..m].to_vec(), history })
    }

    /// One simulated scenario path.
    pub fn from_scenarios(set: &ScenarioSet, path: usize) -> Result<Self> {
        if path >= set.paths() {
            return Err(Error::Shape(format!("scenario {path} out of {}", set.paths())));
        }
        let m = set.grid.len();
        let bond = (0..m).map(|t| set.gross_return(path, t, 0)).collect();
        let risky = (0..m).map(|t| (1..set.assets()).map(|a| set.gross_return(path, t, a)).collect()).collect();
        Ok(Self { grid: set.grid, bond, risky, states: vec![path; m], history: vec![0; m] })
    }

    /// Deterministic bond-only path.
    pub fn bond_only(grid: TimeGrid, rate: f64) -> Self {
        let g = libm::exp(rate * grid.step());
        Self { grid, bond: vec![g; grid.len()], risky: vec![Vec::new(); grid.len()], states: vec![0; grid.len()], history: vec![0; grid.len()] }
    }

    /// Portfolio gross return over step `t`.
    pub fn portfolio_return(&self, t: usize, allocation: &[f64]) -> f64 {
        let rf = self.bond[t];
        let excess: f64 = allocation.iter().zip(&self.risky[t]).map(|(a, r)| a * (r - rf)).sum();
        rf + excess
    }
}

/// Fund values along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundTrajectory {
    pub grid: TimeGrid,
    /// Pre-consumption value (`F_t` total, or `Y_t` per original member).
    pub pre: Vec<f64>,
    /// Post-consumption value.
    pub post: Vec<f64>,
    /// Survivor counts (finite collectives) at each grid point.
    pub survivors: Vec<u64>,
    /// Alive fraction at each grid point.
    pub alive: Vec<f64>,
    /// Consumption rate per survivor.
    pub consumption: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl FundTrajectory {
    pub fn admissible(&self) -> bool {
        self.first_violation.is_none()
    }

    /// Value left after the last payment.
    pub fn terminal(&self) -> f64 {
        *self.post.last().expect("nonempty trajectory")
    }
}

struct Recorder {
    traj: FundTrajectory,
    slack: f64,
}

/// Rounding allowance for the nonnegativity checks, relative to the budget.
const ROUNDING: f64 = 1e-12;

impl Recorder {
    fn new(grid: TimeGrid, budget: f64) -> Self {
        let m = grid.len();
        Self {
            traj: FundTrajectory {
                grid,
                pre: Vec::with_capacity(m),
                post: Vec::with_capacity(m),
                survivors: Vec::with_capacity(m),
                alive: Vec::with_capacity(m),
                consumption: Vec::with_capacity(m),
                first_violation: None,
            },
            slack: ROUNDING * libm::fabs(budget).max(1.0),
        }
    }

    fn push(&mut self, t: usize, pre: f64, post: f64, survivors: u64, alive: f64, consumption: f64) {
        if self.traj.first_violation.is_none() && !(pre >= -self.slack && post >= -self.slack) {
            self.traj.first_violation = Some(t);
        }
        self.traj.pre.push(pre);
        self.traj.post.push(post);
        self.traj.survivors.push(survivors);
        self.traj.alive.push(alive);
        self.traj.consumption.push(consumption);
    }
}

fn check_path(path: &MarketPath, grid: TimeGrid) -> Result<()> {
    if path.grid != grid || path.bond.len() != grid.len() {
        return Err(Error::Shape("market path and fund are on different grids".into()));
    }
    Ok(())
}

/// Finite collective: total value `F`, withdrawal `n_t gamma_t dt`.
pub fn evolve_finite<S: Strategy + ?Sized>(
    strategy: &S,
    path: &MarketPath,
    survivors: &SurvivorPath,
    budgets: &[f64],
) -> Result<FundTrajectory> {
    let grid = path.grid;
    check_path(path, grid)?;
    let n = survivors.initial;
    if budgets.len() as u64 != n || survivors.counts.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} budgets and {} survivor points for a collective of {n} on {} points",
            budgets.len(),
            survivors.counts.len(),
            grid.len()
        )));
    }
    let dt = grid.step();
    let mut f: f64 = budgets.iter().sum();
    let mut rec = Recorder::new(grid, f);
    for t in 0..grid.len() {
        let k = survivors.counts[t];
        let alive = k as f64 / n as f64;
        let state = FundState { t, survivors: Some(k), alive_fraction: alive, wealth: f / n as f64, market: path.states[t], history: path.history[t] };
        let d = strategy.decide(&state);
        let c = if k == 0 { 0.0 } else { d.consumption };
        let post = f - k as f64 * c * dt;
        rec.push(t, f, post, k, alive, c);
        f = post * path.portfolio_return(t, &d.allocation);
    }
    Ok(rec.traj)
}

/// Infinite collective: value per original member `Y`, withdrawal
/// `pi_t gamma_t dt`.
pub fn evolve_infinite<S: Strategy + ?Sized>(
    strategy: &S,
    path: &MarketPath,
    table: &MortalityTable,
    budget: f64,
) -> Result<FundTrajectory> {
    let grid = path.grid;
    check_path(path, grid)?;
    if table.grid() != grid {
        return Err(Error::Shape("mortality table and market path are on different grids".into()));
    }
    let dt = grid.step();
    let mut rec = Recorder::new(grid, budget);
    let mut y = budget;
    for t in 0..grid.len() {
        let pi = table.survival(t);
        let state = FundState { t, survivors: None, alive_fraction: pi, wealth: y, market: path.states[t], history: path.history[t] };
        let d = strategy.decide(&state);
        let post = y - pi * d.consumption * dt;
        rec.push(t, y, post, 0, pi, d.consumption);
        y = post * path.portfolio_return(t, &d.allocation);
    }
    Ok(rec.traj)
}

/// Heterogeneous infinite collective, per person:
/// `Ybar_t = Y_t - sum_z gamma^z_t pi^z_t omega^z dt`, `Y_0 = sum_z omega^z B^z`.
/// The trajectory's consumption column holds the drain rate per person.
pub fn evolve_heterogeneous(
    consumption: &[Vec<f64>],
    weights: &[f64],
    budgets: &[f64],
    tables: &[&MortalityTable],
    path: &MarketPath,
    allocation: &[Vec<f64>],
) -> Result<FundTrajectory> {
    let l = consumption.len();
    if weights.len() != l || budgets.len() != l || tables.len() != l {
        return Err(Error::Shape("per-type inputs have different lengths".into()));
    }
    let total: f64 = weights.iter().sum();
    if libm::fabs(total - 1.0) > 1e-12 || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidPopulation(format!("weights must be positive and sum to 1, sum is {total}")));
    }
    let grid = path.grid;
    let virtual_streams: Vec<Vec<f64>> = (0..l)
        .map(|z| {
            if consumption[z].len() != grid.len() || tables[z].grid() != grid {
                return Err(Error::Shape(format!("type {z} is not on the market grid")));
            }
            Ok((0..grid.len()).map(|t| consumption[z][t] * tables[z].survival(t) * weights[z]).collect())
        })
        .collect::<Result<_>>()?;
    let budget: f64 = weights.iter().zip(budgets).map(|(w, b)| w * b).sum();
    let mut traj = evolve_virtual(&virtual_streams, budget, path, allocation)?;
    for t in 0..grid.len() {
        traj.alive[t] = (0..l).map(|z| weights[z] * tables[z].survival(t)).sum();
    }
    Ok(traj)
}

/// Fund without mortality paying the given streams to virtual individuals,
/// `Ybar_t = Y_t - sum_i gamma_hat^i_t dt`.
pub fn evolve_virtual(streams: &[Vec<f64>], budget: f64, path: &MarketPath, allocation: &[Vec<f64>]) -> Result<FundTrajectory> {
    let grid = path.grid;
    check_path(path, grid)?;
    if allocation.len() != grid.len() || streams.iter().any(|s| s.len() != grid.len()) {
        return Err(Error::Shape("streams and allocation must cover the grid".into()));
    }
    let dt = grid.step();
    let mut rec = Recorder::new(grid, budget);
    let mut y = budget;
    for t in 0..grid.len() {
        let drain: f64 = streams.iter().map(|s| s[t]).sum();
        let post = y - drain * dt;
        rec.push(t, y, post, 0, 1.0, drain);
        y = post * path.portfolio_return(t, &allocation[t]);
    }
    Ok(rec.traj)
}

/// Replaces individual consumptions by the survivor mean at each grid point.
/// Individual `i` is alive at `t` when `death[i] >= t`; the dead receive 0.
pub fn equal_split(consumption: &[Vec<f64>], death: &[usize]) -> Result<Vec<Vec<f64>>> {
    if consumption.len() != death.len() || consumption.is_empty() {
        return Err(Error::Shape("one death index per individual is required".into()));
    }
    let m = consumption[0].len();
    if consumption.iter().any(|c| c.len() != m) {
        return Err(Error::Shape("consumption streams differ in length".into()));
    }
    let mut out = vec![vec![0.0; m]; consumption.len()];
    for t in 0..m {
        let alive: Vec<usize> = (0..death.len()).filter(|&i| death[i] >= t).collect();
        if alive.is_empty() {
            continue;
        }
        let mean = alive.iter().map(|&i| consumption[i][t]).sum::<f64>() / alive.len() as f64;
        for &i in &alive {
            out[i][t] = mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketModel;
    use crate::mortality::{MortalityLaw, SurvivorPath};
    use approx::assert_relative_eq;

    struct Drawdown;

    impl Strategy for Drawdown {
        fn decide(&self, s: &FundState) -> Decision {
            // spread what is left evenly over the remaining points
            let left = (10 - s.t) as f64;
            Decision { consumption: s.wealth_per_survivor() / left, allocation: vec![] }
        }
    }

    #[test]
    fn zero_consumption_conserves_budget() {
        let grid = TimeGrid::new(1.0, 5.0).unwrap();
        let path = MarketPath::bond_only(grid, 0.0);
        let survivors = SurvivorPath { initial: 3, seed: 0, index: 0, counts: vec![3, 3, 2, 1, 1] };
        let s = ConstantStrategy { consumption: 0.0, allocation: vec![] };
        let tr = evolve_finite(&s, &path, &survivors, &[1.0, 2.0, 3.0]).unwrap();
        assert!(tr.pre.iter().all(|&f| f == 6.0));
        assert!(tr.admissible());
    }

    #[test]
    fn equal_drawdown_exhausts_the_fund() {
        let grid = TimeGrid::new(1.0, 10.0).unwrap();
        let path = MarketPath::bond_only(grid, 0.0);
        let survivors = SurvivorPath { initial: 2, seed: 0, index: 0, counts: vec![2; 10] };
        let tr = evolve_finite(&Drawdown, &path, &survivors, &[5.0, 5.0]).unwrap();
        assert!(tr.admissible());
        assert!(tr.terminal().abs() < 1e-12);
        assert!(tr.consumption.iter().all(|&c| (c - 0.5).abs() < 1e-12));
    }

    #[test]
    fn overspending_is_flagged() {
        let grid = TimeGrid::new(1.0, 3.0).unwrap();
        let path = MarketPath::bond_only(grid, 0.02);
        let survivors = SurvivorPath { initial: 1, seed: 0, index: 0, counts: vec![1, 1, 1] };
        let s = ConstantStrategy { consumption: 10.0, allocation: vec![] };
        let tr = evolve_finite(&s, &path, &survivors, &[1.0]).unwrap();
        assert_eq!(tr.first_violation, Some(0));
    }

    #[test]
    fn annuity_exhausts_infinite_collective() {
        let grid = TimeGrid::new(0.5, 10.0).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let path = MarketPath::bond_only(grid, 0.0);
        let gamma = 2.0 / table.expected_grid_lifetime();
        let s = ConstantStrategy { consumption: gamma, allocation: vec![] };
        let tr = evolve_infinite(&s, &path, &table, 2.0).unwrap();
        assert!(tr.terminal().abs() < 1e-12);
        assert!(tr.admissible());
    }

    #[test]
    fn self_financing_on_lattice_path() {
        let grid = TimeGrid::new(0.25, 2.0).unwrap();
        let lattice = Lattice::build(&MarketModel::single(0.03, 0.07, 0.3).unwrap(), grid).unwrap();
        let ups = [0, 1, 1, 2, 3, 3, 3, 4, 5];
        let path = MarketPath::from_lattice(&lattice, &ups).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let s = ConstantStrategy { consumption: 0.3, allocation: vec![0.6] };
        let tr = evolve_infinite(&s, &path, &table, 1.0).unwrap();
        for t in 0..grid.len() - 1 {
            let r = 0.4 * lattice.bond_growth() + 0.6 * path.risky[t][0];
            assert_relative_eq!(tr.pre[t + 1], tr.post[t] * r, max_relative = 1e-15);
        }
    }

    #[test]
    fn heterogeneous_reduces_to_single_type() {
        let grid = TimeGrid::new(1.0, 6.0).unwrap();
        let table = MortalityTable::new(&MortalityLaw::GompertzMakeham { a: 0.0, b: 0.1, c: 0.3 }, grid).unwrap();
        let path = MarketPath::bond_only(grid, 0.01);
        let g = vec![0.15; 6];
        let het = evolve_heterogeneous(&[g.clone()], &[1.0], &[1.0], &[&table], &path, &vec![vec![]; 6]).unwrap();
        let s = ConstantStrategy { consumption: 0.15, allocation: vec![] };
        let inf = evolve_infinite(&s, &path, &table, 1.0).unwrap();
        for t in 0..6 {
            assert_relative_eq!(het.pre[t], inf.pre[t], max_relative = 1e-14);
            assert_relative_eq!(het.post[t], inf.post[t], max_relative = 1e-14);
        }
    }

    #[test]
    fn equal_split_basics() {
        let c = vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0, 9.0], vec![5.0, 0.0, 0.0]];
        let out = equal_split(&c, &[2, 1, 0]).unwrap();
        assert_eq!(out[0], vec![3.0, 3.0, 3.0]);
        assert_eq!(out[1], vec![3.0, 3.0, 0.0]);
        assert_eq!(out[2], vec![3.0, 0.0, 0.0]);
        let same = vec![vec![2.0; 3]; 2];
        assert_eq!(equal_split(&same, &[2, 2]).unwrap(), same);
    }
}
