//! Moving an infinite-collective consumption stream to a finite collective.
//!
//! Each survivor consumes `lambda gamma_t 1_G` where `G` is the survivor-bound
//! event up to `t`. The fund holds `n` copies of the replication of
//! `pi gamma`; while `G` holds the payout `k lambda gamma` is at most the
//! replicated flow `n pi gamma`, and the surplus sits in the bond.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::policy::realised_gain;
use super::{HomogeneousProblem, McEstimate};
use crate::market::{Lattice, NodeField};
use crate::math::binomial_pmf;
use crate::mortality::{sample_counts, survivor_bound_exact, within_bound, MortalityTable};
use crate::preferences::{evaluate, AliveChain, GainFunction, LatticeChain, Recursion};
use crate::rng::{stream, streams};
use crate::{Error, Result, TimeGrid};

const PMF_CUTOFF: f64 = 1e-18;

/// Alive chain of the representative member under the transferred stream:
/// lattice node, count of other survivors and whether the bound still holds.
/// Once the bound fails consumption is zero for good, so failed states only
/// track the lattice node. Within a node, slots `0..width` are the kept
/// counts and the last slot is the failed state.
#[derive(Debug, Clone)]
pub struct TransferChain<'a> {
    lattice: &'a Lattice,
    table: &'a MortalityTable,
    gamma: &'a NodeField,
    lambda: f64,
    /// Range `[lo, lo + width)` of other-survivor counts kept at each level.
    lo: Vec<u64>,
    width: Vec<usize>,
    /// Survivor-count transitions from each kept count.
    pmf: Vec<Vec<(u64, Vec<f64>)>>,
}

impl<'a> TransferChain<'a> {
    pub fn new(lattice: &'a Lattice, table: &'a MortalityTable, gamma: &'a NodeField, lambda: f64, n: u64) -> Result<Self> {
        check_inputs(lattice, table, gamma, lambda, n)?;
        let m = lattice.levels();
        let nf = n as f64;
        let bound = |t: usize| nf * table.survival(t) / lambda;
        let mut lo = Vec::with_capacity(m);
        let mut width = Vec::with_capacity(m);
        let mut pmf = Vec::with_capacity(m);
        // At t = 0 all n - 1 others are alive and the bound holds.
        let (mut klo, mut khi) = (n - 1, n - 1);
        for t in 0..m {
            while khi >= klo && !within_bound(khi + 1, bound(t)) {
                if khi == 0 {
                    break;
                }
                khi -= 1;
            }
            let w = if within_bound(khi + 1, bound(t)) && khi >= klo { (khi - klo + 1) as usize } else { 0 };
            lo.push(klo);
            width.push(w);
            if t + 1 == m {
                pmf.push(Vec::new());
                break;
            }
            let d = table.conditional_death(t);
            let moves: Vec<(u64, Vec<f64>)> = (0..w as u64).map(|i| binomial_pmf(klo + i, 1.0 - d, PMF_CUTOFF)).collect();
            let (mut nlo, mut nhi) = (u64::MAX, 0);
            for (first, probs) in &moves {
                nlo = nlo.min(*first);
                nhi = nhi.max(first + probs.len() as u64 - 1);
            }
            pmf.push(moves);
            if w == 0 {
                nlo = 0;
                nhi = 0;
            }
            klo = nlo;
            khi = nhi;
        }
        Ok(Self { lattice, table, gamma, lambda, lo, width, pmf })
    }

    fn slots(&self, t: usize) -> usize {
        1 + self.width[t]
    }

    fn node_of(&self, t: usize, s: usize) -> (usize, usize) {
        (s / self.slots(t), s % self.slots(t))
    }
}

impl AliveChain for TransferChain<'_> {
    fn grid(&self) -> TimeGrid {
        self.lattice.grid()
    }

    fn states(&self, t: usize) -> usize {
        (t + 1) * self.slots(t)
    }

    fn consumption(&self, t: usize, s: usize) -> f64 {
        let (j, slot) = self.node_of(t, s);
        if slot == self.width[t] {
            0.0
        } else {
            self.lambda * self.gamma.get(t, j)
        }
    }

    fn death_probability(&self, t: usize, _s: usize) -> f64 {
        self.table.conditional_death(t)
    }

    fn successors(&self, t: usize, s: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (j, slot) = self.node_of(t, s);
        let p = self.lattice.p_up();
        let next = self.slots(t + 1);
        let failed_slot = self.width[t + 1];
        let market = [(j, 1.0 - p), (j + 1, p)];
        if slot == self.width[t] {
            for (j2, pm) in market {
                out.push((j2 * next + failed_slot, pm));
            }
            return;
        }
        let (first, probs) = &self.pmf[t][slot];
        let (nlo, nw) = (self.lo[t + 1], self.width[t + 1] as u64);
        for (j2, pm) in market {
            let mut failed = 0.0;
            for (q, &pk) in probs.iter().enumerate() {
                let k2 = first + q as u64;
                if nw > 0 && k2 >= nlo && k2 < nlo + nw {
                    out.push((j2 * next + (k2 - nlo) as usize, pm * pk));
                } else {
                    failed += pk;
                }
            }
            if failed > 0.0 {
                out.push((j2 * next + failed_slot, pm * failed));
            }
        }
    }
}

fn check_inputs(lattice: &Lattice, table: &MortalityTable, gamma: &NodeField, lambda: f64, n: u64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain { what: "transfer lambda in (0, 1)", value: lambda });
    }
    if n == 0 {
        return Err(Error::InvalidPopulation("collective size must be at least 1".into()));
    }
    if gamma.levels() != lattice.levels() || table.grid().len() != lattice.levels() {
        return Err(Error::Shape(format!(
            "stream has {} levels, lattice {}, mortality table {}",
            gamma.levels(),
            lattice.levels(),
            table.grid().len()
        )));
    }
    Ok(())
}

/// Exact gain of the transferred stream for a collective of size `n`.
pub fn transfer_gain(problem: &HomogeneousProblem, gamma: &NodeField, lambda: f64, n: u64) -> Result<f64> {
    let lattice = problem.lattice()?;
    let chain = TransferChain::new(&lattice, &problem.table, gamma, lambda, n)?;
    Ok(evaluate(&Recursion::new(&problem.gain, problem.grid.step()), &chain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAudit {
    pub paths: u64,
    /// Paths on which fund value went negative before or after consumption.
    pub violations: u64,
    /// Smallest pre- or post-consumption fund value seen, per original member.
    pub min_wealth: f64,
    /// Paths on which the survivor bound failed before the last grid point.
    pub bound_failures: u64,
    /// Monte Carlo gain of member 0 (pathwise gains only).
    pub gain: Option<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub n: u64,
    pub lambda: f64,
    /// Exact gain of the transferred stream.
    pub gain: f64,
    /// Gain of `lambda gamma` in the infinite collective, the `n -> inf` limit.
    pub limit_gain: f64,
    /// Exact probability that the survivor bound holds up to the last grid
    /// point.
    pub bound_probability: f64,
    pub audit: TransferAudit,
}

/// Simulates the transferred strategy on `paths` market and mortality paths,
/// tracking fund wealth and member 0's realised gain.
pub fn audit_transfer(problem: &HomogeneousProblem, gamma: &NodeField, lambda: f64, n: u64, paths: u64, seed: u64) -> Result<TransferAudit> {
    let lattice = problem.lattice()?;
    check_inputs(&lattice, &problem.table, gamma, lambda, n)?;
    let table = &problem.table;
    let grid = problem.grid;
    let m = grid.len();
    let dt = grid.step();
    let flow = NodeField::from_fn(m, |t, j| table.survival(t) * gamma.get(t, j));
    let rep = lattice.replicate(&flow)?;
    let nf = n as f64;
    let surplus0 = nf * (problem.budget - rep.initial_budget);
    let slack = 1e-12 * nf * problem.budget.max(1.0);
    if surplus0 < -slack {
        return Err(Error::Infeasible(format!(
            "stream costs {} per member, budget is {}",
            rep.initial_budget, problem.budget
        )));
    }
    let pathwise = !matches!(problem.gain, GainFunction::EpsteinZin(_));
    let growth = lattice.bond_growth();
    let (mut violations, mut failures) = (0u64, 0u64);
    let mut min_wealth = f64::INFINITY;
    let (mut sum, mut sum2) = (0.0, 0.0);
    let mut own = vec![0.0; m];
    for p in 0..paths {
        let mut rng = stream(seed, streams::AUDIT, p);
        let ups = lattice.sample_path(&mut rng);
        let tau = table.sample_death(&mut rng);
        let others = if n > 1 { sample_counts(n - 1, table, m, &mut rng) } else { vec![0; m] };
        let mut surplus = surplus0;
        let mut holds = true;
        let mut bad = false;
        for t in 0..m {
            let j = ups[t];
            let k = others[t] + u64::from(tau >= t);
            holds = holds && within_bound(k, nf * table.survival(t) / lambda);
            let c = if holds { lambda * gamma.get(t, j) } else { 0.0 };
            own[t] = if tau >= t { c } else { 0.0 };
            let pre = nf * rep.pre.get(t, j) + surplus;
            surplus += nf * flow.get(t, j) * dt - k as f64 * c * dt;
            let post = nf * rep.post.get(t, j) + surplus;
            min_wealth = min_wealth.min(pre.min(post) / nf);
            if pre < -slack || post < -slack {
                bad = true;
            }
            surplus *= growth;
        }
        violations += u64::from(bad);
        failures += u64::from(!holds);
        if pathwise {
            let g = realised_gain(&problem.gain, dt, &own[..=tau], |t| grid.time(t))?;
            sum += g;
            sum2 += g * g;
        }
    }
    let gain = if pathwise && paths > 1 {
        let k = paths as f64;
        let mean = sum / k;
        let var = ((sum2 - k * mean * mean) / (k - 1.0)).max(0.0);
        Some(McEstimate { mean, std_error: libm::sqrt(var / k), paths, inadmissible_paths: violations })
    } else {
        None
    };
    Ok(TransferAudit { paths, violations, min_wealth, bound_failures: failures, gain })
}

/// Transfers `gamma` (admissible for the infinite collective) to a
/// collective of size `n`: exact gain, its large-`n` limit, the bound
/// probability and a path-by-path audit.
pub fn transfer_infinite_to_finite(
    problem: &HomogeneousProblem,
    gamma: &NodeField,
    lambda: f64,
    n: u64,
    paths: u64,
    seed: u64,
) -> Result<TransferResult> {
    let lattice = problem.lattice()?;
    let audit = audit_transfer(problem, gamma, lambda, n, paths, seed)?;
    let gain = transfer_gain(problem, gamma, lambda, n)?;
    let scaled = gamma.scale(lambda);
    let chain = LatticeChain::new(&lattice, &problem.table, &scaled)?;
    let limit_gain = evaluate(&Recursion::new(&problem.gain, problem.grid.step()), &chain);
    let bound_probability = survivor_bound_exact(n, &problem.table, lambda, problem.grid.len() - 1)?;
    Ok(TransferResult { n, lambda, gain, limit_gain, bound_probability, audit })
}
