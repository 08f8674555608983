use alloc::vec;
use alloc::vec::Vec;

use crate::math::binomial_pmf;
use crate::mortality::MortalityTable;

/// Tail mass below which binomial survivor probabilities are dropped.
const PMF_CUTOFF: f64 = 1e-18;

/// Transition of the representative survivor's collective over one step,
/// conditional on the representative surviving: the next state, its
/// probability, and the factor applied to wealth per survivor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Move {
    pub to: usize,
    pub prob: f64,
    pub scale: f64,
}

/// Survivor-count dynamics seen by one living member: finite collectives
/// track `k` survivors (representative included) with
/// `k' = 1 + Bin(k - 1, s_t)`, wealth per survivor scaling by `k / k'`;
/// the infinite collective has one state and scales by `1 / s_t`.
#[derive(Debug, Clone)]
pub(crate) struct Population {
    finite: bool,
    death: Vec<f64>,
    moves: Vec<Vec<Vec<Move>>>,
}

impl Population {
    pub fn finite(table: &MortalityTable, max: u64) -> Self {
        let m = table.grid().len();
        let death: Vec<f64> = (0..m).map(|t| table.conditional_death(t)).collect();
        let moves = (0..m)
            .map(|t| {
                let s = 1.0 - death[t];
                (1..=max)
                    .map(|k| {
                        if t + 1 == m || s <= 0.0 {
                            return Vec::new();
                        }
                        let (first, probs) = binomial_pmf(k - 1, s, PMF_CUTOFF);
                        probs
                            .iter()
                            .enumerate()
                            .map(|(i, &p)| {
                                let k2 = 1 + first + i as u64;
                                Move { to: (k2 - 1) as usize, prob: p, scale: k as f64 / k2 as f64 }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { finite: true, death, moves }
    }

    pub fn infinite(table: &MortalityTable) -> Self {
        let m = table.grid().len();
        let death: Vec<f64> = (0..m).map(|t| table.conditional_death(t)).collect();
        let moves = (0..m)
            .map(|t| {
                let s = 1.0 - death[t];
                if t + 1 == m || s <= 0.0 {
                    vec![Vec::new()]
                } else {
                    vec![vec![Move { to: 0, prob: 1.0, scale: 1.0 / s }]]
                }
            })
            .collect();
        Self { finite: false, death, moves }
    }

    pub fn states(&self) -> usize {
        self.moves[0].len()
    }

    pub fn death(&self, t: usize) -> f64 {
        self.death[t]
    }

    pub fn moves(&self, t: usize, state: usize) -> &[Move] {
        &self.moves[t][state]
    }

    /// State index of a collective of `n` members (all alive).
    pub fn index_of(&self, n: u64) -> usize {
        if self.finite {
            (n - 1) as usize
        } else {
            0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.finite
    }
}
