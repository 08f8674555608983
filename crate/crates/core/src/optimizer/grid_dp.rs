use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::population::Population;
use super::{CollectiveSize, Diagnostics, HomogeneousProblem, Method, Policy, ValueResult};
use crate::market::Lattice;
use crate::math::{golden_max, Pchip};
use crate::preferences::{GainFunction, Recursion, Utility};
use crate::{par, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpOptions {
    /// Wealth grid points.
    pub points: usize,
    /// Lowest grid wealth as a multiple of the budget.
    pub lower: f64,
    /// Highest grid wealth as a multiple of the budget.
    pub upper: f64,
    /// Relative tolerance of the golden-section searches.
    pub tolerance: f64,
    /// Re-solve on a grid of half the size and report the difference as the
    /// error estimate.
    pub richardson: bool,
    /// Use the wealth grid even where an exact reduction exists.
    pub force_grid: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { points: 400, lower: 1e-4, upper: 1e2, tolerance: 1e-8, richardson: false, force_grid: false }
    }
}

/// Monotone transform of linear values used for interpolation:
/// `y = ln(sign * L)` when `L` keeps one sign and varies over orders of
/// magnitude, the identity otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    Log(f64),
}

impl Transform {
    fn for_gain(gain: &GainFunction) -> Self {
        match gain {
            GainFunction::Vnm(p) => match p.utility {
                Utility::Power { exponent } => Transform::Log(if exponent < 0.0 { -1.0 } else { 1.0 }),
                _ => Transform::Identity,
            },
            GainFunction::ExpKm(_) | GainFunction::EpsteinZin(_) => Transform::Log(1.0),
        }
    }

    #[inline]
    fn forward(self, l: f64) -> f64 {
        match self {
            Transform::Identity => l,
            Transform::Log(sign) => libm::log(sign * l),
        }
    }

    #[inline]
    fn inverse(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Log(sign) => sign * libm::exp(y),
        }
    }
}

/// Interpolated linear value on the log-wealth grid.
struct Interp {
    pchip: Pchip,
    lo: f64,
    hi: f64,
    clamp_below: bool,
    transform: Transform,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    above: u64,
    below: u64,
}

impl Interp {
    #[inline]
    fn eval(&self, wealth: f64, counts: &mut Counts) -> f64 {
        let x = if wealth > 0.0 { libm::log(wealth) } else { f64::NEG_INFINITY };
        let y = if x < self.lo {
            counts.below += 1;
            if self.clamp_below || !x.is_finite() {
                self.pchip.values()[0]
            } else {
                self.pchip.eval(x)
            }
        } else {
            if x > self.hi {
                counts.above += 1;
            }
            self.pchip.eval(x)
        };
        self.transform.inverse(y)
    }
}

struct Sweep<'a> {
    rec: Recursion,
    transform: Transform,
    clamp_below: bool,
    lattice: &'a Lattice,
    x: Vec<f64>,
    wealth: Vec<f64>,
    tol: f64,
    theta_range: (f64, f64),
}

pub(crate) fn solve_grid(
    problem: &HomogeneousProblem,
    lattice: &Lattice,
    pop: &Population,
    sizes: &[u64],
    options: &DpOptions,
) -> Result<Vec<ValueResult>> {
    let mut results = sweep(problem, lattice, pop, sizes, options, options.points);
    if options.richardson {
        let coarse = sweep(problem, lattice, pop, sizes, options, options.points / 2);
        for (r, c) in results.iter_mut().zip(coarse) {
            r.error = Some(libm::fabs(r.value - c.value));
        }
    }
    Ok(results)
}

fn sweep(
    problem: &HomogeneousProblem,
    lattice: &Lattice,
    pop: &Population,
    sizes: &[u64],
    options: &DpOptions,
    points: usize,
) -> Vec<ValueResult> {
    let grid = problem.grid;
    let dt = grid.step();
    let m = grid.len();
    let x0 = libm::log(options.lower * problem.budget);
    let x1 = libm::log(options.upper * problem.budget);
    let x: Vec<f64> = (0..points).map(|i| x0 + (x1 - x0) * i as f64 / (points - 1) as f64).collect();
    let wealth: Vec<f64> = x.iter().map(|&v| libm::exp(v)).collect();
    let theta_range = if lattice.is_degenerate() {
        (0.0, 0.0)
    } else {
        let rf = lattice.bond_growth();
        let shrink = 1.0 - 1e-9;
        (-rf / (lattice.up() - rf) * shrink, rf / (rf - lattice.down()) * shrink)
    };
    let sw = Sweep {
        rec: Recursion::new(&problem.gain, dt),
        transform: Transform::for_gain(&problem.gain),
        clamp_below: matches!(problem.gain, GainFunction::EpsteinZin(_)),
        lattice,
        x,
        wealth,
        tol: options.tolerance,
        theta_range,
    };
    let states = pop.states();
    let keep = sizes.iter().map(|&n| pop.index_of(n)).max().unwrap_or(0) + 1;
    let mut diag = Diagnostics::default();
    let mut kappa_table: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut theta_table: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut next: Vec<Interp> = Vec::new();
    let mut first_phi: Vec<Option<Interp>> = Vec::new();
    for t in (0..m).rev() {
        let time = grid.time(t);
        let d = pop.death(t);
        let terminal = t + 1 == m || d >= 1.0;
        let solved: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Option<Interp>, Counts, u64)> = par::map(states, |k| {
            let mut counts = Counts::default();
            if terminal {
                let l: Vec<f64> = sw.wealth.iter().map(|&w| sw.rec.step(time, w / dt, sw.rec.death())).collect();
                return (l, vec![1.0; points], vec![0.0; points], None, counts, 0);
            }
            let moves = pop.moves(t, k);
            let mut theta = vec![0.0; points];
            let mut phi = vec![0.0; points];
            for i in 0..points {
                let (th, e) = sw.best_allocation(sw.wealth[i], d, moves, &next, &mut counts);
                theta[i] = th;
                phi[i] = e;
            }
            let phi_y: Vec<f64> = phi.iter().map(|&e| sw.transform.forward(e)).collect();
            let interp = sw.interp(phi_y);
            let mut kappa = vec![0.0; points];
            let mut l = vec![0.0; points];
            for i in 0..points {
                let (kp, li) = sw.best_consumption(time, sw.wealth[i], &interp, &mut counts);
                kappa[i] = kp;
                l[i] = li;
            }
            let bad = sw.nonconcave(&l);
            (l, kappa, theta, Some(interp), counts, bad)
        });
        let mut interps = Vec::with_capacity(states);
        kappa_table[t] = Vec::with_capacity(keep);
        theta_table[t] = Vec::with_capacity(keep);
        first_phi.clear();
        for (k, (l, kappa, theta, phi, counts, bad)) in solved.into_iter().enumerate() {
            diag.grid_exceeded += counts.above;
            diag.grid_below += counts.below;
            diag.nonconcave_points += bad;
            if k < keep {
                kappa_table[t].push(kappa);
                theta_table[t].push(theta);
            }
            interps.push(sw.interp(l.iter().map(|&v| sw.transform.forward(v)).collect()));
            if t == 0 {
                first_phi.push(phi);
            }
        }
        next = interps;
    }
    sizes
        .iter()
        .map(|&n| {
            let k = pop.index_of(n);
            let mut counts = Counts::default();
            let l0 = match &first_phi[k] {
                None => sw.rec.step(0.0, problem.budget / dt, sw.rec.death()),
                Some(phi) => sw.best_consumption(0.0, problem.budget, phi, &mut counts).1,
            };
            let upto = k + 1;
            let policy = Policy::Grid {
                log_wealth: sw.x.clone(),
                kappa: kappa_table.iter().map(|v| v[..upto].to_vec()).collect(),
                theta: theta_table.iter().map(|v| v[..upto].to_vec()).collect(),
            };
            ValueResult {
                value: sw.rec.value(l0),
                size: if pop.is_finite() { CollectiveSize::Finite(n) } else { CollectiveSize::Infinite },
                method: Method::Dp,
                error: None,
                policy,
                diagnostics: diag.clone(),
            }
        })
        .collect()
}

impl Sweep<'_> {
    fn interp(&self, y: Vec<f64>) -> Interp {
        Interp {
            lo: self.x[0],
            hi: *self.x.last().expect("grid"),
            pchip: Pchip::new(self.x.clone(), y),
            clamp_below: self.clamp_below,
            transform: self.transform,
        }
    }

    /// Expected linear continuation from post-consumption wealth `wbar`,
    /// maximised over the risky fraction.
    fn best_allocation(&self, wbar: f64, d: f64, moves: &[super::population::Move], next: &[Interp], counts: &mut Counts) -> (f64, f64) {
        let rf = self.lattice.bond_growth();
        let (u, dn, p) = (self.lattice.up(), self.lattice.down(), self.lattice.p_up());
        let death = d * self.rec.death();
        let orient = self.rec.orientation();
        let expected = |theta: f64, counts: &mut Counts| {
            let ru = rf + theta * (u - rf);
            let rd = rf + theta * (dn - rf);
            let mut acc = 0.0;
            for mv in moves {
                let w = wbar * mv.scale;
                let up = if p > 0.0 { p * next[mv.to].eval(w * ru, counts) } else { 0.0 };
                let down = if p < 1.0 { (1.0 - p) * next[mv.to].eval(w * rd, counts) } else { 0.0 };
                acc += mv.prob * (up + down);
            }
            death + (1.0 - d) * acc
        };
        let (lo, hi) = self.theta_range;
        if lo == hi {
            return (0.0, expected(0.0, counts));
        }
        let mut local = Counts::default();
        let (theta, _) = golden_max(|th| orient * expected(th, &mut local), lo, hi, self.tol);
        // count the final evaluation only, not the search
        (theta, expected(theta, counts))
    }

    /// Linear value at pre-consumption wealth `w`, maximised over the
    /// consumed fraction.
    fn best_consumption(&self, time: f64, w: f64, phi: &Interp, counts: &mut Counts) -> (f64, f64) {
        let dt = self.rec.dt();
        let orient = self.rec.orientation();
        let mut local = Counts::default();
        let f = |kappa: f64, c: &mut Counts| {
            let cont = phi.eval(w * (1.0 - kappa), c);
            self.rec.step(time, kappa * w / dt, cont)
        };
        let (kappa, _) = golden_max(|k| orient * f(k, &mut local), 0.0, 1.0, self.tol);
        (kappa, f(kappa, counts))
    }

    fn nonconcave(&self, l: &[f64]) -> u64 {
        let v: Vec<f64> = l.iter().map(|&x| self.rec.value(x)).collect();
        let mut bad = 0;
        for i in 1..v.len() - 1 {
            let s0 = (v[i] - v[i - 1]) / (self.wealth[i] - self.wealth[i - 1]);
            let s1 = (v[i + 1] - v[i]) / (self.wealth[i + 1] - self.wealth[i]);
            if s0.is_finite() && s1.is_finite() && s1 > s0 + 1e-6 * libm::fabs(s0) + 1e-12 {
                bad += 1;
            }
        }
        bad
    }
}
