use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MarketModel;
use crate::{Error, Result, TimeGrid};

/// Values indexed by lattice node `(level, ups)` with `ups <= level`,
/// stored as a packed triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    levels: usize,
    data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(levels: usize) -> Self {
        Self { levels, data: vec![0.0; levels * (levels + 1) / 2] }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(levels: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(levels * (levels + 1) / 2);
        for i in 0..levels {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { levels, data }
    }

    /// Field that depends on the level only.
    pub fn deterministic(stream: &[f64]) -> Self {
        Self::from_fn(stream.len(), |i, _| stream[i])
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i < self.levels);
        self.data[Self::offset(i) + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i < self.levels);
        self.data[Self::offset(i) + j] = v;
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.data[Self::offset(i)..Self::offset(i) + i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map<F: FnMut(usize, usize, f64) -> f64>(&self, mut f: F) -> Self {
        Self::from_fn(self.levels, |i, j| f(i, j, self.get(i, j)))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|_, _, v| k * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.levels, other.levels);
        self.map(|i, j, v| v + other.get(i, j))
    }
}

/// Recombining binomial lattice for one risky asset over a time grid.
///
/// Up and down factors follow Cox–Ross–Rubinstein, `u = exp(sigma sqrt(dt))`,
/// `d = 1/u`. A zero-volatility asset is a clone of the bond with
/// `u = d = exp(r dt)` and branch probabilities 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    grid: TimeGrid,
    rate: f64,
    initial: f64,
    up: f64,
    down: f64,
    q_up: f64,
    p_up: f64,
}

impl Lattice {
    pub fn build(model: &MarketModel, grid: TimeGrid) -> Result<Self> {
        if model.risky_count() != 1 {
            return Err(Error::InvalidMarket(format!(
                "lattice mode needs exactly one risky asset, model has {}",
                model.risky_count()
            )));
        }
        let asset = model.assets()[0];
        let dt = grid.step();
        let growth = libm::exp(model.rate() * dt);
        if asset.volatility == 0.0 {
            return Ok(Self {
                grid,
                rate: model.rate(),
                initial: asset.initial,
                up: growth,
                down: growth,
                q_up: 0.5,
                p_up: 0.5,
            });
        }
        let up = libm::exp(asset.volatility * libm::sqrt(dt));
        let down = 1.0 / up;
        let q_up = (growth - down) / (up - down);
        if !(0.0..=1.0).contains(&q_up) {
            return Err(Error::StepTooCoarse { step: dt, probability: q_up });
        }
        let p_up = (libm::exp(asset.drift * dt) - down) / (up - down);
        if !(0.0..=1.0).contains(&p_up) {
            return Err(Error::StepTooCoarse { step: dt, probability: p_up });
        }
        Ok(Self { grid, rate: model.rate(), initial: asset.initial, up, down, q_up, p_up })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Number of consumption levels `m`; node levels `0..=m` exist.
    pub fn levels(&self) -> usize {
        self.grid.len()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn up(&self) -> f64 {
        self.up
    }

    pub fn down(&self) -> f64 {
        self.down
    }

    /// Risk-neutral probability of an up move.
    pub fn q_up(&self) -> f64 {
        self.q_up
    }

    /// Real-world probability of an up move.
    pub fn p_up(&self) -> f64 {
        self.p_up
    }

    pub fn is_degenerate(&self) -> bool {
        self.up == self.down
    }

    /// One-step gross return of the bond.
    pub fn bond_growth(&self) -> f64 {
        libm::exp(self.rate * self.grid.step())
    }

    pub fn risky_price(&self, level: usize, ups: usize) -> f64 {
        self.initial * libm::pow(self.up, ups as f64) * libm::pow(self.down, (level - ups) as f64)
    }

    pub fn bond_price(&self, level: usize) -> f64 {
        libm::exp(self.rate * self.grid.time(level))
    }

    /// Node probabilities at each consumption level under the given up
    /// probability, by forward propagation.
    pub fn node_probabilities(&self, up_probability: f64) -> NodeField {
        let m = self.levels();
        let mut field = NodeField::zeros(m);
        field.set(0, 0, 1.0);
        for i in 1..m {
            for j in 0..=i {
                let from_down = if j < i { field.get(i - 1, j) * (1.0 - up_probability) } else { 0.0 };
                let from_up = if j > 0 { field.get(i - 1, j - 1) * up_probability } else { 0.0 };
                field.set(i, j, from_down + from_up);
            }
        }
        field
    }

    /// Draws a node path under the real-world measure; entry `i` is the number
    /// of up moves by level `i` (length `m + 1`).
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let m = self.levels();
        let mut path = Vec::with_capacity(m + 1);
        let mut ups = 0;
        path.push(0);
        for _ in 0..m {
            if rng.random::<f64>() < self.p_up {
                ups += 1;
            }
            path.push(ups);
        }
        path
    }

    /// Gross one-step risky return from node `(level, ups)` along `next_ups`.
    pub fn risky_return(&self, ups: usize, next_ups: usize) -> f64 {
        if next_ups > ups {
            self.up
        } else {
            self.down
        }
    }

    fn check_cashflow(&self, cashflow: &NodeField) -> Result<()> {
        if cashflow.levels() != self.levels() {
            return Err(Error::Shape(format!(
                "cashflow has {} levels, lattice has {}",
                cashflow.levels(),
                self.levels()
            )));
        }
        for i in 0..cashflow.levels() {
            for (j, &v) in cashflow.level(i).iter().enumerate() {
                if !(v >= 0.0) {
                    return Err(Error::NegativeCashflow { t: i, node: j, value: v });
                }
            }
        }
        Ok(())
    }

    /// Price `sum_t dt * E_Q[gamma_t / S^1_t]` of a nonnegative adapted
    /// consumption-rate field.
    pub fn q_price(&self, cashflow: &NodeField) -> Result<f64> {
        self.check_cashflow(cashflow)?;
        let q = self.node_probabilities(self.q_up);
        let dt = self.grid.step();
        let mut total = 0.0;
        for i in 0..self.levels() {
            let level: f64 = cashflow.level(i).iter().zip(q.level(i)).map(|(c, p)| c * p).sum();
            total += dt * level / self.bond_price(i);
        }
        Ok(total)
    }

    /// Self-financing replication of a nonnegative consumption-rate field.
    pub fn replicate(&self, cashflow: &NodeField) -> Result<Replication> {
        self.check_cashflow(cashflow)?;
        let m = self.levels();
        let dt = self.grid.step();
        let discount = 1.0 / self.bond_growth();
        let mut pre = NodeField::zeros(m);
        let mut post = NodeField::zeros(m);
        let mut risky_units = NodeField::zeros(m);
        let mut bond_units = NodeField::zeros(m);
        let mut next = vec![0.0; m + 1];
        for i in (0..m).rev() {
            let mut here = vec![0.0; i + 1];
            for j in 0..=i {
                let (v_down, v_up) = (next[j], next[j + 1]);
                let after = discount * (self.q_up * v_up + (1.0 - self.q_up) * v_down);
                let delta = if self.is_degenerate() {
                    if libm::fabs(v_up - v_down) > 1e-12 * (1.0 + libm::fabs(v_up) + libm::fabs(v_down)) {
                        return Err(Error::NotReplicable(format!(
                            "children of node ({i}, {j}) carry different values on a zero-volatility lattice"
                        )));
                    }
                    0.0
                } else {
                    (v_up - v_down) / (self.risky_price(i + 1, j + 1) - self.risky_price(i + 1, j))
                };
                let bond = (after - delta * self.risky_price(i, j)) / self.bond_price(i);
                post.set(i, j, after);
                risky_units.set(i, j, delta);
                bond_units.set(i, j, bond);
                let value = after + cashflow.get(i, j) * dt;
                pre.set(i, j, value);
                here[j] = value;
            }
            next[..=i].copy_from_slice(&here);
        }
        Ok(Replication { initial_budget: pre.get(0, 0), pre, post, risky_units, bond_units })
    }
}

/// Replicating portfolio of a consumption field: node values before and
/// after each payment and the holdings carried over the following step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub initial_budget: f64,
    pub pre: NodeField,
    pub post: NodeField,
    pub risky_units: NodeField,
    pub bond_units: NodeField,
}

impl Replication {
    /// Fraction of post-payment value held in the risky asset.
    pub fn risky_fraction(&self, lattice: &Lattice, level: usize, ups: usize) -> f64 {
        let v = self.post.get(level, ups);
        if v <= 0.0 {
            0.0
        } else {
            self.risky_units.get(level, ups) * lattice.risky_price(level, ups) / v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lattice(r: f64, mu: f64, sigma: f64, dt: f64, horizon: f64) -> Lattice {
        let model = MarketModel::single(r, mu, sigma).unwrap();
        Lattice::build(&model, TimeGrid::new(dt, horizon).unwrap()).unwrap()
    }

    #[test]
    fn degenerate_volatility_is_a_bond_clone() {
        let l = lattice(0.0, 0.0, 0.0, 1.0, 5.0);
        assert_eq!(l.up(), 1.0);
        assert_eq!(l.down(), 1.0);
        assert_eq!(l.q_up(), 0.5);
    }

    #[test]
    fn zero_rate_zero_drift_gives_p_equal_q() {
        let l = lattice(0.0, 0.0, 0.3, 0.5, 5.0);
        assert_eq!(l.p_up(), l.q_up());
    }

    #[test]
    fn every_node_is_a_discounted_q_martingale() {
        let l = lattice(0.02, 0.06, 0.2, 1.0, 12.0);
        for i in 0..l.levels() {
            for j in 0..=i {
                let expected = (l.q_up() * l.risky_price(i + 1, j + 1)
                    + (1.0 - l.q_up()) * l.risky_price(i + 1, j))
                    / l.bond_price(i + 1);
                let here = l.risky_price(i, j) / l.bond_price(i);
                assert_abs_diff_eq!(expected, here, epsilon = 1e-13 * here);
            }
        }
    }

    #[test]
    fn coarse_step_is_rejected() {
        let model = MarketModel::single(0.5, 0.5, 0.1).unwrap();
        let err = Lattice::build(&model, TimeGrid::new(1.0, 3.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::StepTooCoarse { .. }));
    }

    #[test]
    fn immediate_payment_and_zero_rate_annuity() {
        let l = lattice(0.03, 0.05, 0.2, 0.5, 4.0);
        let once = NodeField::from_fn(l.levels(), |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(l.q_price(&once).unwrap(), 0.5, epsilon = 1e-15);
        let l0 = lattice(0.0, 0.05, 0.2, 0.5, 4.0);
        let c = NodeField::from_fn(l0.levels(), |_, _| 2.5);
        assert_abs_diff_eq!(l0.q_price(&c).unwrap(), 2.5 * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_cashflow_is_rejected() {
        let l = lattice(0.0, 0.0, 0.2, 1.0, 3.0);
        let mut c = NodeField::zeros(3);
        c.set(2, 1, -1.0);
        assert!(matches!(l.q_price(&c), Err(Error::NegativeCashflow { t: 2, node: 1, .. })));
    }

    #[test]
    fn deterministic_stream_is_replicated_with_bonds_only() {
        let l = lattice(0.04, 0.07, 0.25, 1.0, 6.0);
        let c = NodeField::deterministic(&[1.0, 0.5, 2.0, 0.0, 1.5, 1.0]);
        let rep = l.replicate(&c).unwrap();
        for &d in rep.risky_units.as_slice() {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(rep.initial_budget, l.q_price(&c).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn zero_cashflow_needs_nothing() {
        let l = lattice(0.01, 0.05, 0.2, 1.0, 4.0);
        let rep = l.replicate(&NodeField::zeros(4)).unwrap();
        assert_eq!(rep.initial_budget, 0.0);
        assert!(rep.risky_units.as_slice().iter().all(|&d| d == 0.0));
        assert!(rep.bond_units.as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let l = lattice(0.01, 0.05, 0.2, 1.0, 4.0);
        assert!(matches!(l.replicate(&NodeField::zeros(3)), Err(Error::Shape(_))));
    }

    #[test]
    fn non_adapted_cashflow_on_degenerate_lattice() {
        let l = lattice(0.0, 0.0, 0.0, 1.0, 3.0);
        let c = NodeField::from_fn(3, |i, j| if i == 2 && j == 0 { 1.0 } else { 0.0 });
        assert!(matches!(l.replicate(&c), Err(Error::NotReplicable(_))));
    }
}
