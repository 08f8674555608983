use super::{evaluate, EzParams, GainFunction, LatticeChain, Recursion};
use crate::market::{Lattice, NodeField};
use crate::mortality::MortalityTable;
use crate::{Error, Result};

/// Epstein–Zin aggregator `f(gamma, v) = b (alpha v / rho) ((gamma / (alpha v)^{1/alpha})^rho - 1)`,
/// defined for `v < 0`.
pub fn ez_aggregator(params: &EzParams, gamma: f64, v: f64) -> Result<f64> {
    if !(v < 0.0) {
        return Err(Error::Domain { what: "Epstein–Zin aggregator needs v < 0", value: v });
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain { what: "Epstein–Zin aggregator needs gamma >= 0", value: gamma });
    }
    let (a, r, b) = (params.alpha, params.rho, params.discount);
    let av = a * v;
    let ce = libm::pow(av, 1.0 / a);
    Ok(b * (av / r) * (libm::pow(gamma / ce, r) - 1.0))
}

/// Discrete Epstein–Zin utility of a node consumption field for an individual
/// with the given mortality, under the real-world lattice measure.
pub fn ez_utility_discrete(params: &EzParams, consumption: &NodeField, table: &MortalityTable, lattice: &Lattice) -> Result<f64> {
    params.validate()?;
    for i in 0..consumption.levels() {
        for (j, &c) in consumption.level(i).iter().enumerate() {
            if !(c >= 0.0) {
                return Err(Error::NegativeCashflow { t: i, node: j, value: c });
            }
        }
    }
    let chain = LatticeChain::new(lattice, table, consumption)?;
    let rec = Recursion::new(&GainFunction::EpsteinZin(*params), lattice.grid().step());
    Ok(evaluate(&rec, &chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketModel;
    use crate::mortality::MortalityLaw;
    use crate::TimeGrid;
    use approx::assert_relative_eq;

    #[test]
    fn aggregator_vanishes_at_adequacy() {
        let p = EzParams::new(-3.0, 0.4, 0.07, 1.3).unwrap();
        assert_eq!(ez_aggregator(&p, 1.3, p.terminal()).unwrap().abs() < 1e-15, true);
        assert_relative_eq!(
            ez_aggregator(&p, 0.0, p.terminal()).unwrap(),
            -0.07 * libm::pow(1.3, -3.0) / 0.4,
            max_relative = 1e-14
        );
        assert!(ez_aggregator(&p, 1.0, 0.0).is_err());
    }

    #[test]
    fn aggregator_reference_value() {
        // v = -1: alpha v = 1 and the bracket vanishes.
        // v = -1/4: (alpha v)^{1/alpha} = 4, f = 0.1 * 0.5 * ((1/4)^{1/2} - 1).
        let p = EzParams::new(-1.0, 0.5, 0.1, 1.0).unwrap();
        assert_eq!(ez_aggregator(&p, 1.0, -1.0).unwrap(), 0.0);
        assert_relative_eq!(ez_aggregator(&p, 1.0, -0.25).unwrap(), -0.025, max_relative = 1e-14);
    }

    #[test]
    fn adequacy_stream_is_the_fixed_point() {
        let grid = TimeGrid::new(0.25, 4.0).unwrap();
        let lattice = Lattice::build(&MarketModel::single(0.01, 0.05, 0.25).unwrap(), grid).unwrap();
        let table = MortalityTable::new(&MortalityLaw::Uniform, grid).unwrap();
        let p = EzParams::new(-2.0, 0.6, 0.04, 0.8).unwrap();
        let field = NodeField::from_fn(grid.len(), |_, _| 0.8);
        let v = ez_utility_discrete(&p, &field, &table, &lattice).unwrap();
        assert_relative_eq!(v, p.terminal(), max_relative = 1e-12);
    }
}
