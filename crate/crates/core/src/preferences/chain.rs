use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Recursion;
use crate::market::{Lattice, NodeField};
use crate::mortality::MortalityTable;
use crate::{Error, Result, TimeGrid};

/// Markov chain of states in which the representative individual is alive,
/// with a consumption rate attached to every state. The chain starts in
/// state 0 at grid index 0.
pub trait AliveChain {
    fn grid(&self) -> TimeGrid;
    fn states(&self, t: usize) -> usize;
    fn consumption(&self, t: usize, s: usize) -> f64;
    /// Probability of dying at `t` (after consuming) given alive in `s`.
    fn death_probability(&self, t: usize, s: usize) -> f64;
    /// Successor states at `t + 1` conditional on survival; probabilities
    /// sum to one.
    fn successors(&self, t: usize, s: usize, out: &mut Vec<(usize, f64)>);
}

/// Lattice nodes crossed with survival of one individual under a mortality
/// table. Consumption is a node field.
#[derive(Debug, Clone, Copy)]
pub struct LatticeChain<'a> {
    lattice: &'a Lattice,
    table: &'a MortalityTable,
    consumption: &'a NodeField,
    up: f64,
}

impl<'a> LatticeChain<'a> {
    /// Chain under the real-world measure.
    pub fn new(lattice: &'a Lattice, table: &'a MortalityTable, consumption: &'a NodeField) -> Result<Self> {
        if consumption.levels() != lattice.levels() || table.grid().len() != lattice.levels() {
            return Err(Error::Shape(format!(
                "lattice has {} levels, consumption {}, mortality table {}",
                lattice.levels(),
                consumption.levels(),
                table.grid().len()
            )));
        }
        Ok(Self { lattice, table, consumption, up: lattice.p_up() })
    }
}

impl AliveChain for LatticeChain<'_> {
    fn grid(&self) -> TimeGrid {
        self.lattice.grid()
    }

    fn states(&self, t: usize) -> usize {
        t + 1
    }

    fn consumption(&self, t: usize, s: usize) -> f64 {
        self.consumption.get(t, s)
    }

    fn death_probability(&self, t: usize, _s: usize) -> f64 {
        self.table.conditional_death(t)
    }

    fn successors(&self, _t: usize, s: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((s, 1.0 - self.up));
        out.push((s + 1, self.up));
    }
}

/// A deterministic consumption stream with mortality only.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicChain<'a> {
    table: &'a MortalityTable,
    consumption: &'a [f64],
}

impl<'a> DeterministicChain<'a> {
    pub fn new(table: &'a MortalityTable, consumption: &'a [f64]) -> Result<Self> {
        if consumption.len() != table.grid().len() {
            return Err(Error::Shape(format!(
                "stream has {} entries, grid has {}",
                consumption.len(),
                table.grid().len()
            )));
        }
        Ok(Self { table, consumption })
    }
}

impl AliveChain for DeterministicChain<'_> {
    fn grid(&self) -> TimeGrid {
        self.table.grid()
    }

    fn states(&self, _t: usize) -> usize {
        1
    }

    fn consumption(&self, t: usize, _s: usize) -> f64 {
        self.consumption[t]
    }

    fn death_probability(&self, t: usize, _s: usize) -> f64 {
        self.table.conditional_death(t)
    }

    fn successors(&self, _t: usize, _s: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
    }
}

fn expected_next<C: AliveChain>(
    rec: &Recursion,
    chain: &C,
    t: usize,
    s: usize,
    next: &[f64],
    buf: &mut Vec<(usize, f64)>,
) -> (f64, f64) {
    let last = t + 1 == chain.grid().len();
    let d = if last { 1.0 } else { chain.death_probability(t, s) };
    let mut e = d * rec.death();
    if d < 1.0 {
        chain.successors(t, s, buf);
        let mut cont = 0.0;
        for &(s2, p) in buf.iter() {
            if p > 0.0 {
                cont += p * next[s2];
            }
        }
        e += (1.0 - d) * cont;
    }
    (e, d)
}

/// Gain of the chain's consumption for an individual alive at time 0.
pub fn evaluate<C: AliveChain>(rec: &Recursion, chain: &C) -> f64 {
    let m = chain.grid().len();
    let mut buf = Vec::new();
    let mut next: Vec<f64> = Vec::new();
    for t in (0..m).rev() {
        let time = chain.grid().time(t);
        let here: Vec<f64> = (0..chain.states(t))
            .map(|s| {
                let (e, _) = expected_next(rec, chain, t, s, &next, &mut buf);
                rec.step(time, chain.consumption(t, s), e)
            })
            .collect();
        next = here;
    }
    rec.value(next[0])
}

/// Gain together with its derivative with respect to the consumption rate in
/// every chain state, by a forward adjoint sweep.
pub fn evaluate_with_gradient<C: AliveChain>(rec: &Recursion, chain: &C) -> (f64, Vec<Vec<f64>>) {
    let m = chain.grid().len();
    let mut buf = Vec::new();
    // (dL/dgamma, dL/dE * (1 - d)) per state
    let mut partials: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    let mut next: Vec<f64> = Vec::new();
    for t in (0..m).rev() {
        let time = chain.grid().time(t);
        let mut here = Vec::with_capacity(chain.states(t));
        let mut part = Vec::with_capacity(chain.states(t));
        for s in 0..chain.states(t) {
            let (e, d) = expected_next(rec, chain, t, s, &next, &mut buf);
            let (l, dg, de) = rec.step_partials(time, chain.consumption(t, s), e);
            here.push(l);
            part.push((dg, de * (1.0 - d)));
        }
        partials[t] = part;
        next = here;
    }
    let value = rec.value(next[0]);
    let slope = rec.value(1.0) - rec.value(0.0);
    let mut grad: Vec<Vec<f64>> = (0..m).map(|t| vec![0.0; chain.states(t)]).collect();
    let mut adj = vec![slope];
    for t in 0..m {
        let mut adj_next = if t + 1 < m { vec![0.0; chain.states(t + 1)] } else { Vec::new() };
        for s in 0..chain.states(t) {
            let (dg, de) = partials[t][s];
            grad[t][s] = adj[s] * dg;
            if t + 1 < m && de != 0.0 {
                chain.successors(t, s, &mut buf);
                for &(s2, p) in buf.iter() {
                    adj_next[s2] += adj[s] * de * p;
                }
            }
        }
        adj = adj_next;
    }
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketModel;
    use crate::mortality::MortalityLaw;
    use crate::preferences::{EzParams, GainFunction, Utility, VnmParams};
    use approx::assert_relative_eq;

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = TimeGrid::new(0.5, 3.0).unwrap();
        let lattice = Lattice::build(&MarketModel::single(0.02, 0.06, 0.2).unwrap(), grid).unwrap();
        let table = MortalityTable::new(&MortalityLaw::GompertzMakeham { a: 0.01, b: 0.05, c: 0.4 }, grid).unwrap();
        let field = NodeField::from_fn(grid.len(), |i, j| 0.8 + 0.1 * i as f64 + 0.05 * j as f64);
        let gains = [
            GainFunction::Vnm(VnmParams::new(Utility::Power { exponent: -1.0 }, 0.03).unwrap()),
            GainFunction::ExpKm(crate::preferences::ExpKmParams::new(Utility::Log).unwrap()),
            GainFunction::EpsteinZin(EzParams::new(-2.0, 0.5, 0.05, 1.0).unwrap()),
        ];
        for gain in gains {
            let rec = Recursion::new(&gain, grid.step());
            let chain = LatticeChain::new(&lattice, &table, &field).unwrap();
            let (v, grad) = evaluate_with_gradient(&rec, &chain);
            assert_relative_eq!(v, evaluate(&rec, &chain), max_relative = 1e-14);
            for (i, j) in [(0, 0), (2, 1), (5, 5)] {
                let h = 1e-6;
                let bumped = field.map(|a, b, x| if (a, b) == (i, j) { x + h } else { x });
                let chain2 = LatticeChain::new(&lattice, &table, &bumped).unwrap();
                let fd = (evaluate(&rec, &chain2) - v) / h;
                assert_relative_eq!(grad[i][j], fd, max_relative = 1e-4);
            }
        }
    }
}
