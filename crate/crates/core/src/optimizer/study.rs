use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{solve_finite_sizes, solve_infinite_dp, DpOptions, HomogeneousProblem};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub value: f64,
    /// `v_inf - v_n`.
    pub gap: f64,
    /// `(v_n - v_1) / (v_inf - v_1)`; `None` when collectivisation brings
    /// no benefit.
    pub benefit_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub infinite: f64,
    pub single: f64,
}

impl ConvergenceTable {
    /// Values nondecreasing in `n` up to `tolerance`.
    pub fn monotone(&self, tolerance: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].value >= w[0].value - tolerance)
    }

    /// Gaps nonincreasing in `n` up to `tolerance`.
    pub fn gaps_nonincreasing(&self, tolerance: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap + tolerance)
    }
}

/// `v_n` for the given sizes (sorted, with `n = 1` added), `v_inf`, gaps and
/// collectivisation-benefit ratios.
pub fn convergence_study(problem: &HomogeneousProblem, sizes: &[u64], options: &DpOptions) -> Result<ConvergenceTable> {
    let mut sizes: Vec<u64> = sizes.to_vec();
    sizes.push(1);
    sizes.sort_unstable();
    sizes.dedup();
    let finite = solve_finite_sizes(problem, &sizes, options)?;
    let infinite = solve_infinite_dp(problem, options)?.value;
    let single = finite[0].value;
    let span = infinite - single;
    let rows = sizes
        .iter()
        .zip(&finite)
        .map(|(&n, r)| ConvergenceRow {
            n,
            value: r.value,
            gap: infinite - r.value,
            benefit_ratio: if span > 0.0 { Some((r.value - single) / span) } else { None },
        })
        .collect();
    Ok(ConvergenceTable { rows, infinite, single })
}
