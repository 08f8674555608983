use super::HomogeneousProblem;
use crate::preferences::{evaluate, DeterministicChain, Recursion};
use crate::{Error, Result};

/// Constant consumption `X_0 / sum_t pi_t dt` that exhausts the budget
/// against expected survival at zero interest.
pub fn annuity_consumption(problem: &HomogeneousProblem) -> f64 {
    problem.budget / problem.table.expected_grid_lifetime()
}

/// Gain of the annuity stream under the problem's preferences.
pub fn annuity_value(problem: &HomogeneousProblem) -> Result<f64> {
    problem.gain.validate()?;
    if !(problem.budget >= 0.0) {
        return Err(Error::Domain { what: "budget must be nonnegative", value: problem.budget });
    }
    let stream = alloc::vec![annuity_consumption(problem); problem.grid.len()];
    let chain = DeterministicChain::new(&problem.table, &stream)?;
    Ok(evaluate(&Recursion::new(&problem.gain, problem.grid.step()), &chain))
}
