use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{CollectiveSize, HomogeneousProblem};
use crate::fund::{evolve_finite, evolve_infinite, Decision, FundState, MarketPath, Strategy};
use crate::market::NodeField;
use crate::mortality::{sample_counts, SurvivorPath};
use crate::preferences::GainFunction;
use crate::rng::{stream, streams};
use crate::{Error, Result};

/// Tabulated strategy returned by the solvers. Survivor counts index the
/// second dimension (`k - 1`; a single entry for the infinite collective).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Consumed fraction of pre-consumption wealth per survivor and risky
    /// fraction of post-consumption wealth, independent of wealth.
    Fractions { kappa: Vec<Vec<f64>>, theta: Vec<Vec<f64>> },
    /// Fractions on a log-wealth grid: `kappa[t][k][i]` at pre-consumption
    /// wealth `exp(log_wealth[i])`, `theta[t][k][i]` at that post-consumption
    /// wealth.
    Grid { log_wealth: Vec<f64>, kappa: Vec<Vec<Vec<f64>>>, theta: Vec<Vec<Vec<f64>>> },
    /// Consumption rate per survivor and risky fraction at each lattice node.
    Cashflow { consumption: NodeField, risky_fraction: NodeField },
    /// Consumption rate and risky fraction per lattice move history
    /// (`[t][history]`).
    PathCashflow { consumption: Vec<Vec<f64>>, risky_fraction: Vec<Vec<f64>> },
}

/// A [`Policy`] as a fund strategy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStrategy<'a> {
    pub policy: &'a Policy,
    pub dt: f64,
}

fn lerp(x: &[f64], y: &[f64], at: f64) -> f64 {
    if !(at > x[0]) {
        return y[0];
    }
    let n = x.len();
    if at >= x[n - 1] {
        return y[n - 1];
    }
    let h = (x[n - 1] - x[0]) / (n - 1) as f64;
    let i = (((at - x[0]) / h) as usize).min(n - 2);
    let s = (at - x[i]) / (x[i + 1] - x[i]);
    y[i] + s * (y[i + 1] - y[i])
}

impl Strategy for PolicyStrategy<'_> {
    fn decide(&self, state: &FundState) -> Decision {
        let t = state.t;
        if state.survivors == Some(0) {
            return Decision { consumption: 0.0, allocation: vec![0.0] };
        }
        let w = state.wealth_per_survivor();
        match self.policy {
            Policy::Fractions { kappa, theta } => {
                let k = slot(state, kappa[t].len());
                Decision { consumption: kappa[t][k] * w / self.dt, allocation: vec![theta[t][k]] }
            }
            Policy::Grid { log_wealth, kappa, theta } => {
                let k = slot(state, kappa[t].len());
                let lw = if w > 0.0 { libm::log(w) } else { f64::NEG_INFINITY };
                let kp = lerp(log_wealth, &kappa[t][k], lw).clamp(0.0, 1.0);
                let wbar = w * (1.0 - kp);
                let lb = if wbar > 0.0 { libm::log(wbar) } else { f64::NEG_INFINITY };
                Decision { consumption: kp * w / self.dt, allocation: vec![lerp(log_wealth, &theta[t][k], lb)] }
            }
            Policy::Cashflow { consumption, risky_fraction } => Decision {
                consumption: consumption.get(t, state.market),
                allocation: vec![risky_fraction.get(t, state.market)],
            },
            Policy::PathCashflow { consumption, risky_fraction } => {
                let b = state.history as usize;
                Decision { consumption: consumption[t][b], allocation: vec![risky_fraction[t][b]] }
            }
        }
    }
}

fn slot(state: &FundState, len: usize) -> usize {
    state.survivors.map(|k| (k as usize).saturating_sub(1)).unwrap_or(0).min(len - 1)
}

/// Monte Carlo estimate of the representative member's gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: u64,
    pub inadmissible_paths: u64,
}

/// Re-simulates a policy on lattice paths and survivor paths and averages
/// the realised gain of member 0. Recursive (Epstein–Zin) gains have no
/// pathwise form and are rejected.
pub fn evaluate_policy_mc(problem: &HomogeneousProblem, policy: &Policy, paths: u64, seed: u64) -> Result<McEstimate> {
    if paths < 2 {
        return Err(Error::Domain { what: "Monte Carlo needs at least two paths", value: paths as f64 });
    }
    let lattice = problem.lattice()?;
    let grid = problem.grid;
    let dt = grid.step();
    let strategy = PolicyStrategy { policy, dt };
    let (mut sum, mut sum2, mut bad) = (0.0, 0.0, 0u64);
    for p in 0..paths {
        let mut market_rng = stream(seed, streams::MARKET, p);
        let mut death_rng = stream(seed, streams::MORTALITY, p);
        let path = MarketPath::from_lattice(&lattice, &lattice.sample_path(&mut market_rng))?;
        let tau = problem.table.sample_death(&mut death_rng);
        let traj = match problem.size {
            CollectiveSize::Finite(n) => {
                let others = if n > 1 { sample_counts(n - 1, &problem.table, grid.len(), &mut death_rng) } else { vec![0; grid.len()] };
                let counts = (0..grid.len()).map(|t| others[t] + u64::from(tau >= t)).collect();
                let survivors = SurvivorPath { initial: n, seed, index: p, counts };
                evolve_finite(&strategy, &path, &survivors, &vec![problem.budget; n as usize])?
            }
            CollectiveSize::Infinite => evolve_infinite(&strategy, &path, &problem.table, problem.budget)?,
        };
        if !traj.admissible() {
            bad += 1;
        }
        let g = realised_gain(&problem.gain, grid.step(), &traj.consumption[..=tau], |t| grid.time(t))?;
        sum += g;
        sum2 += g * g;
    }
    let n = paths as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate { mean, std_error: libm::sqrt(var / n), paths, inadmissible_paths: bad })
}

pub(crate) fn realised_gain<F: Fn(usize) -> f64>(gain: &GainFunction, dt: f64, consumption: &[f64], time: F) -> Result<f64> {
    match gain {
        GainFunction::Vnm(p) => Ok(consumption
            .iter()
            .enumerate()
            .map(|(t, &c)| libm::exp(-p.discount * time(t)) * p.utility.value(c) * dt)
            .sum()),
        GainFunction::ExpKm(p) => Ok(-libm::exp(-consumption.iter().map(|&c| p.utility.value(c) * dt).sum::<f64>())),
        GainFunction::EpsteinZin(_) => Err(Error::Unsupported("Epstein–Zin utility has no pathwise Monte Carlo estimator".into())),
    }
}
