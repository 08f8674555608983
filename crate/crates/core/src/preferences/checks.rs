use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, GainFunction, LatticeChain, Recursion};
use crate::market::{Lattice, NodeField};
use crate::mortality::MortalityTable;
use crate::rng::{stream, streams};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeViolation {
    pub trial: u64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a randomised shape check; `lhs >= rhs - tolerance` is expected
/// in every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub property: &'static str,
    pub trials: u64,
    pub tolerance: f64,
    pub violations: Vec<ShapeViolation>,
}

impl ShapeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Evaluator<'a> {
    rec: Recursion,
    lattice: &'a Lattice,
    table: &'a MortalityTable,
}

impl Evaluator<'_> {
    fn gain(&self, field: &NodeField) -> Result<f64> {
        Ok(evaluate(&self.rec, &LatticeChain::new(self.lattice, self.table, field)?))
    }
}

fn random_field<R: Rng>(levels: usize, rng: &mut R) -> NodeField {
    NodeField::from_fn(levels, |_, _| 0.1 + 1.9 * rng.random::<f64>())
}

fn run<F>(
    property: &'static str,
    gain: &GainFunction,
    lattice: &Lattice,
    table: &MortalityTable,
    trials: u64,
    seed: u64,
    tolerance: f64,
    mut trial: F,
) -> Result<ShapeReport>
where
    F: FnMut(&Evaluator<'_>, &mut crate::rng::StreamRng) -> Result<(f64, f64)>,
{
    gain.validate()?;
    let ev = Evaluator { rec: Recursion::new(gain, lattice.grid().step()), lattice, table };
    let mut violations = Vec::new();
    for k in 0..trials {
        let mut rng = stream(seed, streams::CONCAVITY, k);
        let (lhs, rhs) = trial(&ev, &mut rng)?;
        let ok = if tolerance < 0.0 { lhs > rhs } else { lhs >= rhs - tolerance };
        if !ok {
            violations.push(ShapeViolation { trial: k, lhs, rhs });
        }
    }
    Ok(ShapeReport { property, trials, tolerance, violations })
}

/// `J(l g + (1 - l) g') >= l J(g) + (1 - l) J(g')` on random node fields.
pub fn check_concavity(
    gain: &GainFunction,
    lattice: &Lattice,
    table: &MortalityTable,
    trials: u64,
    seed: u64,
    tolerance: f64,
) -> Result<ShapeReport> {
    let levels = lattice.levels();
    run("concavity", gain, lattice, table, trials, seed, tolerance, |ev, rng| {
        let a = random_field(levels, rng);
        let b = random_field(levels, rng);
        let l: f64 = rng.random();
        let mix = a.scale(l).add(&b.scale(1.0 - l));
        Ok((ev.gain(&mix)?, l * ev.gain(&a)? + (1.0 - l) * ev.gain(&b)?))
    })
}

/// `g <= g'` pointwise implies `J(g) <= J(g')`.
pub fn check_monotonicity(
    gain: &GainFunction,
    lattice: &Lattice,
    table: &MortalityTable,
    trials: u64,
    seed: u64,
    tolerance: f64,
) -> Result<ShapeReport> {
    let levels = lattice.levels();
    run("monotonicity", gain, lattice, table, trials, seed, tolerance, |ev, rng| {
        let a = random_field(levels, rng);
        let bump = NodeField::from_fn(levels, |_, _| if rng.random::<bool>() { 0.0 } else { rng.random::<f64>() });
        Ok((ev.gain(&a.add(&bump))?, ev.gain(&a)?))
    })
}

/// `J(g + eps) > J(g)` for a uniform bump `eps > 0`.
pub fn check_non_saturation(
    gain: &GainFunction,
    lattice: &Lattice,
    table: &MortalityTable,
    trials: u64,
    seed: u64,
) -> Result<ShapeReport> {
    let levels = lattice.levels();
    // a negative tolerance turns the check into a strict inequality
    run("non_saturation", gain, lattice, table, trials, seed, -f64::MIN_POSITIVE, |ev, rng| {
        let a = random_field(levels, rng);
        let eps = 0.01 + 0.1 * rng.random::<f64>();
        Ok((ev.gain(&a.map(|_, _, x| x + eps))?, ev.gain(&a)?))
    })
}
