//! Martingale method for the infinite collective: choose the node cashflow
//! `gamma` maximising the gain subject to `q_price(pi * gamma) = X_0`, then
//! replicate `pi * gamma`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{reduction, CollectiveSize, Diagnostics, HomogeneousProblem, Method, Policy, Reduction, ValueResult};
use crate::market::{Lattice, NodeField, Replication};
use crate::preferences::{evaluate, evaluate_with_gradient, AliveChain, GainFunction, LatticeChain, Recursion};
use crate::{Error, Result, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KktOptions {
    pub max_iterations: usize,
    /// Stop when no node's consumption moves by more than this, relatively.
    pub tolerance: f64,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self { max_iterations: 5000, tolerance: 1e-11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSolution {
    pub value: f64,
    pub method: Method,
    /// Optimal consumption rate per survivor at each node.
    pub consumption: NodeField,
    /// Replication of `pi_t * gamma_t` per original member.
    pub replication: Replication,
    pub lattice: Lattice,
    /// `q_price(pi * gamma) - X_0`.
    pub budget_residual: f64,
    pub iterations: u64,
    pub converged: bool,
}

impl MartingaleSolution {
    pub fn into_value_result(self) -> ValueResult {
        let lattice = &self.lattice;
        let risky = NodeField::from_fn(lattice.levels(), |i, j| self.replication.risky_fraction(lattice, i, j));
        ValueResult {
            value: self.value,
            size: CollectiveSize::Infinite,
            method: self.method,
            error: Some(libm::fabs(self.budget_residual)),
            policy: Policy::Cashflow { consumption: self.consumption, risky_fraction: risky },
            diagnostics: Diagnostics { iterations: self.iterations, ..Diagnostics::default() },
        }
    }
}

/// Budget weight of each node: `dt pi_t e^{-r t} Q(node)`.
fn cost_weights(problem: &HomogeneousProblem, lattice: &Lattice) -> NodeField {
    let q = lattice.node_probabilities(lattice.q_up());
    let dt = problem.grid.step();
    q.map(|i, _, qij| dt * problem.table.survival(i) * qij / lattice.bond_price(i))
}

fn cost(weights: &NodeField, gamma: &NodeField) -> f64 {
    weights.as_slice().iter().zip(gamma.as_slice()).map(|(w, g)| w * g).sum()
}

/// Solves the infinite collective by the martingale method over cashflows
/// that depend on the lattice node only. Power and log expected utility use
/// the pointwise Lagrangian solution `u'(gamma) = lambda e^{(b - r) t} dQ/dP`,
/// which is optimal among all cashflows; other families iterate the
/// first-order conditions with exact adjoint gradients and give the best
/// node cashflow, a lower bound on the value (see
/// [`solve_martingale_paths`]).
pub fn solve_martingale(problem: &HomogeneousProblem, options: &KktOptions) -> Result<MartingaleSolution> {
    problem.validate()?;
    let lattice = problem.lattice()?;
    let weights = cost_weights(problem, &lattice);
    let rec = Recursion::new(&problem.gain, problem.grid.step());
    let (gamma, method, iterations, converged) = match (reduction(&problem.gain), &problem.gain) {
        (Reduction::Power(_) | Reduction::Log, GainFunction::Vnm(p)) => {
            let pm = lattice.node_probabilities(lattice.p_up());
            let qm = lattice.node_probabilities(lattice.q_up());
            let r = lattice.rate();
            let g = NodeField::from_fn(lattice.levels(), |i, j| {
                let t = problem.grid.time(i);
                let y = libm::exp((p.discount - r) * t) * qm.get(i, j) / pm.get(i, j);
                p.utility.inverse_marginal(y).expect("strictly concave")
            });
            let scale = problem.budget / cost(&weights, &g);
            (g.scale(scale), Method::ClosedForm, 1, true)
        }
        _ => {
            let w = to_levels(&weights);
            let start = flat_start(problem, &w);
            let gain_of = |g: &Levels| -> Result<(f64, Levels)> {
                let field = NodeField::from_fn(lattice.levels(), |i, j| g[i][j]);
                let chain = LatticeChain::new(&lattice, &problem.table, &field)?;
                Ok(evaluate_with_gradient(&rec, &chain))
            };
            let (g, it, ok) = kkt(problem, &rec, &w, start, gain_of, options)?;
            (NodeField::from_fn(lattice.levels(), |i, j| g[i][j]), Method::Martingale, it, ok)
        }
    };
    let chain = LatticeChain::new(&lattice, &problem.table, &gamma)?;
    let value = evaluate(&rec, &chain);
    let per_member = gamma.map(|i, _, g| problem.table.survival(i) * g);
    let replication = lattice.replicate(&per_member)?;
    let budget_residual = replication.initial_budget - problem.budget;
    Ok(MartingaleSolution { value, method, consumption: gamma, replication, lattice, budget_residual, iterations, converged })
}

type Levels = Vec<Vec<f64>>;

fn to_levels(field: &NodeField) -> Levels {
    (0..field.levels()).map(|i| field.level(i).to_vec()).collect()
}

fn level_cost(weights: &Levels, gamma: &Levels) -> f64 {
    weights.iter().zip(gamma).flat_map(|(w, g)| w.iter().zip(g)).map(|(w, g)| w * g).sum()
}

fn flat_start(problem: &HomogeneousProblem, weights: &Levels) -> Levels {
    let total: f64 = weights.iter().flatten().sum();
    weights.iter().map(|l| vec![problem.budget / total; l.len()]).collect()
}

fn budget_fit(rec: &Recursion, weights: &Levels, marginal_weight: &Levels, budget: f64) -> Result<Levels> {
    let demand = |ln_lambda: f64| -> Levels {
        let lambda = libm::exp(ln_lambda);
        weights
            .iter()
            .zip(marginal_weight)
            .map(|(wl, al)| {
                wl.iter()
                    .zip(al)
                    .map(|(&w, &a)| if w <= 0.0 { 0.0 } else { rec.inverse_marginal_shape(lambda * w / a).unwrap_or(0.0) })
                    .collect()
            })
            .collect()
    };
    let spend = |l: f64| level_cost(weights, &demand(l));
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut guard = 0;
    while spend(lo) < budget {
        lo -= 4.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NoConvergence("could not bracket the budget multiplier".into()));
        }
    }
    while spend(hi) > budget {
        hi += 4.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::NoConvergence("could not bracket the budget multiplier".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spend(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut g = demand(0.5 * (lo + hi));
    // remove the residual bisection error exactly
    let c = level_cost(weights, &g);
    if c > 0.0 {
        g.iter_mut().flatten().for_each(|x| *x *= budget / c);
    }
    Ok(g)
}

/// Damped fixed-point iteration on the first-order conditions
/// `dJ/dgamma = lambda w`, with backtracking so the gain never decreases.
fn kkt<G>(
    problem: &HomogeneousProblem,
    rec: &Recursion,
    weights: &Levels,
    mut gamma: Levels,
    gain_of: G,
    options: &KktOptions,
) -> Result<(Levels, u64, bool)>
where
    G: Fn(&Levels) -> Result<(f64, Levels)>,
{
    if rec.inverse_marginal_shape(1.0).is_none() {
        return Err(Error::Unsupported(format!(
            "the martingale method needs a strictly concave felicity ({} given)",
            problem.gain.name()
        )));
    }
    let (mut value, mut grad) = gain_of(&gamma)?;
    let mut step = 1.0;
    for it in 0..options.max_iterations {
        let mut marginal_weight = grad.clone();
        for (al, gl) in marginal_weight.iter_mut().zip(&gamma) {
            for (a, g) in al.iter_mut().zip(gl) {
                *a /= rec.marginal_shape(*g);
            }
        }
        if marginal_weight.iter().flatten().any(|a| !(*a > 0.0)) {
            return Err(Error::NoConvergence("nonpositive marginal gain at a reachable node".into()));
        }
        let target = budget_fit(rec, weights, &marginal_weight, problem.budget)?;
        let change = gamma
            .iter()
            .flatten()
            .zip(target.iter().flatten())
            .map(|(g, t)| libm::fabs(t - g) / g.max(1e-300))
            .fold(0.0, f64::max);
        if change < options.tolerance {
            return Ok((gamma, it as u64, true));
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Levels = gamma
                .iter()
                .zip(&target)
                .map(|(gl, tl)| gl.iter().zip(tl).map(|(g, t)| (1.0 - step) * g + step * t).collect())
                .collect();
            let (v, g) = gain_of(&trial)?;
            if v >= value - 1e-15 * libm::fabs(value) {
                gamma = trial;
                value = v;
                grad = g;
                accepted = true;
                step = (step * 2.0).min(1.0);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok((gamma, options.max_iterations as u64, false));
        }
    }
    Ok((gamma, options.max_iterations as u64, false))
}

/// Deepest lattice for the path-tree martingale method (`2^m` terminal
/// paths).
pub const MAX_TREE_LEVELS: usize = 16;

/// Non-recombining tree of lattice move histories. The node of history `b`
/// at level `t` has children `b` (down) and `b | 1 << t` (up).
struct TreeChain<'a> {
    lattice: &'a Lattice,
    table: &'a crate::mortality::MortalityTable,
    consumption: &'a Levels,
}

impl AliveChain for TreeChain<'_> {
    fn grid(&self) -> TimeGrid {
        self.lattice.grid()
    }

    fn states(&self, t: usize) -> usize {
        1 << t
    }

    fn consumption(&self, t: usize, s: usize) -> f64 {
        self.consumption[t][s]
    }

    fn death_probability(&self, t: usize, _s: usize) -> f64 {
        self.table.conditional_death(t)
    }

    fn successors(&self, t: usize, s: usize, out: &mut Vec<(usize, f64)>) {
        let p = self.lattice.p_up();
        out.clear();
        out.push((s, 1.0 - p));
        out.push((s | 1 << t, p));
    }
}

/// The martingale method over path-dependent cashflows: consumption may
/// depend on the whole move history, not only on the lattice node. For
/// separable power or log utility the node solution is already optimal;
/// other families generally need the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSolution {
    pub value: f64,
    /// `consumption[t][b]` for move history `b` at level `t`.
    pub consumption: Vec<Vec<f64>>,
    /// Risky fraction of post-consumption replication value per history.
    pub risky_fraction: Vec<Vec<f64>>,
    /// Replication value before consumption at the root minus `X_0`.
    pub budget_residual: f64,
    pub iterations: u64,
    pub converged: bool,
}

impl PathSolution {
    pub fn into_value_result(self) -> ValueResult {
        ValueResult {
            value: self.value,
            size: CollectiveSize::Infinite,
            method: Method::Martingale,
            error: Some(libm::fabs(self.budget_residual)),
            policy: Policy::PathCashflow { consumption: self.consumption, risky_fraction: self.risky_fraction },
            diagnostics: Diagnostics { iterations: self.iterations, ..Diagnostics::default() },
        }
    }
}

/// Solves the infinite collective by the martingale method on the tree of
/// move histories.
pub fn solve_martingale_paths(problem: &HomogeneousProblem, options: &KktOptions) -> Result<PathSolution> {
    problem.validate()?;
    let lattice = problem.lattice()?;
    let m = lattice.levels();
    if m > MAX_TREE_LEVELS {
        return Err(Error::Unsupported(format!(
            "path-tree martingale method limited to {MAX_TREE_LEVELS} steps, grid has {m}"
        )));
    }
    let rec = Recursion::new(&problem.gain, problem.grid.step());
    let dt = problem.grid.step();
    let q = lattice.q_up();
    let weights: Levels = (0..m)
        .map(|t| {
            (0..1usize << t)
                .map(|b| {
                    let ups = b.count_ones() as i32;
                    let qb = libm::pow(q, ups as f64) * libm::pow(1.0 - q, (t as i32 - ups) as f64);
                    dt * problem.table.survival(t) * qb / lattice.bond_price(t)
                })
                .collect()
        })
        .collect();
    let start = flat_start(problem, &weights);
    let gain_of = |g: &Levels| -> Result<(f64, Levels)> {
        Ok(evaluate_with_gradient(&rec, &TreeChain { lattice: &lattice, table: &problem.table, consumption: g }))
    };
    let (gamma, iterations, converged) = if rec.inverse_marginal_shape(1.0).is_some() {
        kkt(problem, &rec, &weights, start, gain_of, options)?
    } else {
        return Err(Error::Unsupported(format!(
            "the martingale method needs a strictly concave felicity ({} given)",
            problem.gain.name()
        )));
    };
    let value = evaluate(&rec, &TreeChain { lattice: &lattice, table: &problem.table, consumption: &gamma });
    let (pre0, risky_fraction) = replicate_tree(&lattice, problem, &gamma);
    Ok(PathSolution { value, consumption: gamma, risky_fraction, budget_residual: pre0 - problem.budget, iterations, converged })
}

/// Backward replication of `pi_t gamma_t` on the history tree; returns the
/// initial value and the risky fraction of post-payment value per history.
fn replicate_tree(lattice: &Lattice, problem: &HomogeneousProblem, gamma: &Levels) -> (f64, Levels) {
    let m = lattice.levels();
    let dt = problem.grid.step();
    let q = lattice.q_up();
    let disc = 1.0 / lattice.bond_growth();
    let mut fraction: Levels = (0..m).map(|t| vec![0.0; 1 << t]).collect();
    let mut next: Vec<f64> = vec![0.0; 1 << m];
    for t in (0..m).rev() {
        let here: Vec<f64> = (0..1usize << t)
            .map(|b| {
                let (vd, vu) = (next[b], next[b | 1 << t]);
                let post = disc * (q * vu + (1.0 - q) * vd);
                let ups = b.count_ones() as usize;
                if !lattice.is_degenerate() && post > 0.0 {
                    let delta = (vu - vd) / (lattice.risky_price(t + 1, ups + 1) - lattice.risky_price(t + 1, ups));
                    fraction[t][b] = delta * lattice.risky_price(t, ups) / post;
                }
                post + problem.table.survival(t) * gamma[t][b] * dt
            })
            .collect();
        next = here;
    }
    (next[0], fraction)
}
