//! Exact backward inductions for power and log felicity.
//!
//! With `u(c) = c^alpha / alpha` the value is `w^alpha h(t, k)`; with log it
//! is `a_t ln w + c(t, k)`. Consumption fractions and the risky fraction then
//! have closed forms at every step.

use alloc::vec;
use alloc::vec::Vec;

use super::population::Population;
use super::{CollectiveSize, Diagnostics, HomogeneousProblem, Method, Policy, ValueResult};
use crate::market::Lattice;
use crate::preferences::GainFunction;
use crate::Result;

/// Optimal risky fraction for `max E[R^alpha] / alpha` (`alpha = 0`: log)
/// over one lattice step, with the resulting up and down gross returns.
pub(crate) fn merton_fraction(lattice: &Lattice, alpha: f64) -> (f64, f64, f64) {
    let rf = lattice.bond_growth();
    if lattice.is_degenerate() {
        return (0.0, rf, rf);
    }
    let (u, d, p) = (lattice.up(), lattice.down(), lattice.p_up());
    let x = (1.0 - p) * (rf - d) / (p * (u - rf));
    let psi = libm::pow(x, 1.0 / (alpha - 1.0));
    let theta = rf * (psi - 1.0) / ((u - rf) - psi * (d - rf));
    (theta, rf + theta * (u - rf), rf + theta * (d - rf))
}

fn discount(problem: &HomogeneousProblem) -> f64 {
    match &problem.gain {
        GainFunction::Vnm(p) => p.discount,
        _ => unreachable!("exact reductions are for expected utility"),
    }
}

fn result(value: f64, size: CollectiveSize, kappa: &[Vec<f64>], theta: f64, upto: usize) -> ValueResult {
    let m = kappa.len();
    ValueResult {
        value,
        size,
        method: Method::Dp,
        error: Some(1e-13 * m as f64 * libm::fabs(value)),
        policy: Policy::Fractions {
            kappa: kappa.iter().map(|v| v[..upto].to_vec()).collect(),
            theta: vec![vec![theta; upto]; m],
        },
        diagnostics: Diagnostics::default(),
    }
}

fn size_of(pop: &Population, n: u64) -> CollectiveSize {
    if pop.is_finite() {
        CollectiveSize::Finite(n)
    } else {
        CollectiveSize::Infinite
    }
}

pub(crate) fn solve_power(
    problem: &HomogeneousProblem,
    lattice: &Lattice,
    pop: &Population,
    alpha: f64,
    sizes: &[u64],
) -> Result<Vec<ValueResult>> {
    let grid = problem.grid;
    let (dt, m, b) = (grid.step(), grid.len(), discount(problem));
    let (theta, ru, rd) = merton_fraction(lattice, alpha);
    let p = lattice.p_up();
    let er = p * libm::pow(ru, alpha) + (1.0 - p) * libm::pow(rd, alpha);
    let states = pop.states();
    let mut kappa = vec![vec![1.0; states]; m];
    let mut h_next: Vec<f64> = Vec::new();
    for t in (0..m).rev() {
        let a = libm::pow(dt, 1.0 - alpha) * libm::exp(-b * grid.time(t));
        let d = pop.death(t);
        let mut h = vec![0.0; states];
        for k in 0..states {
            let moves = pop.moves(t, k);
            if t + 1 == m || d >= 1.0 || moves.is_empty() {
                h[k] = a / alpha;
                continue;
            }
            let cont: f64 = moves.iter().map(|mv| mv.prob * libm::pow(mv.scale, alpha) * h_next[mv.to]).sum();
            let bt = alpha * (1.0 - d) * cont * er;
            let r = libm::pow(bt / a, 1.0 / (alpha - 1.0));
            let kp = r / (1.0 + r);
            kappa[t][k] = kp;
            h[k] = (a * libm::pow(kp, alpha) + bt * libm::pow(1.0 - kp, alpha)) / alpha;
        }
        h_next = h;
    }
    Ok(sizes
        .iter()
        .map(|&n| {
            let v = libm::pow(problem.budget, alpha) * h_next[pop.index_of(n)];
            let mut r = result(v, size_of(pop, n), &kappa, theta, pop.index_of(n) + 1);
            r.diagnostics.iterations = m as u64;
            r
        })
        .collect())
}

pub(crate) fn solve_log(problem: &HomogeneousProblem, lattice: &Lattice, pop: &Population, sizes: &[u64]) -> Result<Vec<ValueResult>> {
    let grid = problem.grid;
    let (dt, m, b) = (grid.step(), grid.len(), discount(problem));
    let (theta, ru, rd) = merton_fraction(lattice, 0.0);
    let p = lattice.p_up();
    let elr = p * libm::log(ru) + (1.0 - p) * libm::log(rd);
    let states = pop.states();
    let mut kappa = vec![vec![1.0; states]; m];
    let mut a_next = 0.0;
    let mut c_next: Vec<f64> = Vec::new();
    for t in (0..m).rev() {
        let dd = dt * libm::exp(-b * grid.time(t));
        let d = pop.death(t);
        let terminal = t + 1 == m || d >= 1.0;
        let a = if terminal { dd } else { dd + (1.0 - d) * a_next };
        let mut c = vec![0.0; states];
        for k in 0..states {
            let moves = pop.moves(t, k);
            if terminal || moves.is_empty() {
                c[k] = -dd * libm::log(dt);
                continue;
            }
            let kp = dd / a;
            kappa[t][k] = kp;
            let log_scale: f64 = moves.iter().map(|mv| mv.prob * libm::log(mv.scale)).sum();
            let cont: f64 = moves.iter().map(|mv| mv.prob * c_next[mv.to]).sum();
            c[k] = dd * libm::log(kp) - dd * libm::log(dt)
                + (1.0 - d) * (a_next * (libm::log(1.0 - kp) + elr + log_scale) + cont);
        }
        a_next = a;
        c_next = c;
    }
    Ok(sizes
        .iter()
        .map(|&n| {
            let v = a_next * libm::log(problem.budget) + c_next[pop.index_of(n)];
            let mut r = result(v, size_of(pop, n), &kappa, theta, pop.index_of(n) + 1);
            r.diagnostics.iterations = m as u64;
            r
        })
        .collect())
}
