//! Value functions of homogeneous collectives.
//!
//! Finite collectives are solved by backward induction over
//! `(t, survivors, wealth per survivor)`; the market state drops out because
//! lattice returns are i.i.d. Power and log felicities reduce exactly to
//! recursions on `(t, survivors)`; the remaining families use a geometric
//! wealth grid with monotone cubic interpolation. The infinite collective is
//! solved the same way with the deterministic survival fraction and, as a
//! cross-check, by the martingale method on the lattice.

mod annuity;
mod exact;
mod grid_dp;
mod martingale;
mod measure;
mod policy;
mod population;
mod study;
mod transfer;

pub use annuity::{annuity_consumption, annuity_value};
pub use grid_dp::DpOptions;
pub use martingale::{solve_martingale, solve_martingale_paths, KktOptions, MartingaleSolution, PathSolution, MAX_TREE_LEVELS};
pub use measure::{solve_measure_problem, MeasureSolution};
pub use policy::{evaluate_policy_mc, McEstimate, Policy, PolicyStrategy};
pub use study::{convergence_study, ConvergenceRow, ConvergenceTable};
pub use transfer::{audit_transfer, transfer_gain, transfer_infinite_to_finite, TransferAudit, TransferChain, TransferResult};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::market::{Lattice, MarketModel};
use crate::mortality::MortalityTable;
use crate::preferences::{GainFunction, Utility};
use crate::{Error, Result, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveSize {
    Finite(u64),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousProblem {
    pub gain: GainFunction,
    pub table: MortalityTable,
    pub market: MarketModel,
    pub grid: TimeGrid,
    /// Budget per person `X_0`.
    pub budget: f64,
    pub size: CollectiveSize,
}

impl HomogeneousProblem {
    pub fn new(
        gain: GainFunction,
        table: MortalityTable,
        market: MarketModel,
        budget: f64,
        size: CollectiveSize,
    ) -> Result<Self> {
        let grid = table.grid();
        let p = Self { gain, table, market, grid, budget, size };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.gain.validate()?;
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Domain { what: "budget per person must be positive", value: self.budget });
        }
        if self.table.grid() != self.grid {
            return Err(Error::Shape("mortality table is not on the problem grid".into()));
        }
        if let CollectiveSize::Finite(0) = self.size {
            return Err(Error::InvalidPopulation("collective size must be at least 1".into()));
        }
        self.lattice().map(|_| ())
    }

    pub fn with_size(&self, size: CollectiveSize) -> Self {
        Self { size, ..self.clone() }
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self { budget, ..self.clone() }
    }

    /// Binomial lattice of the market; a bond-only market becomes a
    /// zero-volatility lattice.
    pub fn lattice(&self) -> Result<Lattice> {
        if self.market.risky_count() == 0 {
            let r = self.market.rate();
            return Lattice::build(&MarketModel::single(r, r, 0.0)?, self.grid);
        }
        Lattice::build(&self.market, self.grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dp,
    Martingale,
    ClosedForm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Interpolation queries above the wealth grid (linear extrapolation).
    pub grid_exceeded: u64,
    /// Interpolation queries below the wealth grid (clamped).
    pub grid_below: u64,
    /// Grid points where the value failed a discrete concavity test.
    pub nonconcave_points: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub value: f64,
    pub size: CollectiveSize,
    pub method: Method,
    /// Estimated absolute error of `value`, when available.
    pub error: Option<f64>,
    pub policy: Policy,
    pub diagnostics: Diagnostics,
}

/// Which backward induction a gain function admits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Reduction {
    Power(f64),
    Log,
    Grid,
}

pub(crate) fn reduction(gain: &GainFunction) -> Reduction {
    match gain {
        GainFunction::Vnm(p) => match p.utility {
            Utility::Power { exponent } => Reduction::Power(exponent),
            Utility::Log => Reduction::Log,
            _ => Reduction::Grid,
        },
        _ => Reduction::Grid,
    }
}

/// Solves a finite collective by dynamic programming.
pub fn solve_finite_dp(problem: &HomogeneousProblem, options: &DpOptions) -> Result<ValueResult> {
    let n = match problem.size {
        CollectiveSize::Finite(n) => n,
        CollectiveSize::Infinite => return Err(Error::Unsupported("solve_finite_dp needs a finite collective".into())),
    };
    Ok(solve_finite_sizes(problem, &[n], options)?.remove(0))
}

/// Solves finite collectives of all given sizes with one backward sweep.
pub fn solve_finite_sizes(problem: &HomogeneousProblem, sizes: &[u64], options: &DpOptions) -> Result<Vec<ValueResult>> {
    problem.validate()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidPopulation(format!("sizes must be positive, got {sizes:?}")));
    }
    let max = *sizes.iter().max().expect("nonempty");
    let pop = population::Population::finite(&problem.table, max);
    solve_population(problem, &pop, sizes, options)
}

/// Solves the infinite collective by dynamic programming (method a).
pub fn solve_infinite_dp(problem: &HomogeneousProblem, options: &DpOptions) -> Result<ValueResult> {
    problem.validate()?;
    let pop = population::Population::infinite(&problem.table);
    let mut out = solve_population(problem, &pop, &[1], options)?;
    let mut r = out.remove(0);
    r.size = CollectiveSize::Infinite;
    Ok(r)
}

fn solve_population(
    problem: &HomogeneousProblem,
    pop: &population::Population,
    sizes: &[u64],
    options: &DpOptions,
) -> Result<Vec<ValueResult>> {
    let lattice = problem.lattice()?;
    let kind = if options.force_grid { Reduction::Grid } else { reduction(&problem.gain) };
    match kind {
        Reduction::Power(alpha) => exact::solve_power(problem, &lattice, pop, alpha, sizes),
        Reduction::Log => exact::solve_log(problem, &lattice, pop, sizes),
        Reduction::Grid => grid_dp::solve_grid(problem, &lattice, pop, sizes, options),
    }
}

/// Which methods to run for the infinite collective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfiniteMethod {
    Dp,
    Martingale,
}

/// Solves the infinite collective with the chosen method. The martingale
/// method uses node cashflows for separable power and log utility and the
/// tree of move histories otherwise.
pub fn solve_infinite(problem: &HomogeneousProblem, method: InfiniteMethod, options: &DpOptions) -> Result<ValueResult> {
    match method {
        InfiniteMethod::Dp => solve_infinite_dp(problem, options),
        InfiniteMethod::Martingale => match reduction(&problem.gain) {
            Reduction::Power(_) | Reduction::Log => Ok(solve_martingale(problem, &KktOptions::default())?.into_value_result()),
            Reduction::Grid => Ok(solve_martingale_paths(problem, &KktOptions::default())?.into_value_result()),
        },
    }
}

/// Relative disagreement `|a - b| / max(|a|, |b|)` between the two
/// infinite-collective methods, with both results.
pub fn cross_check_infinite(problem: &HomogeneousProblem, options: &DpOptions) -> Result<(ValueResult, ValueResult, f64)> {
    let a = solve_infinite(problem, InfiniteMethod::Dp, options)?;
    let b = solve_infinite(problem, InfiniteMethod::Martingale, options)?;
    let rel = libm::fabs(a.value - b.value) / libm::fabs(a.value).max(libm::fabs(b.value)).max(f64::MIN_POSITIVE);
    Ok((a, b, rel))
}
