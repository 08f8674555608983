use alloc::string::String;

/// Errors raised by model construction and the solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid market model: {0}")]
    InvalidMarket(String),
    #[error("time step {step} too coarse: risk-neutral branch probability {probability} outside [0, 1]")]
    StepTooCoarse { step: f64, probability: f64 },
    #[error("invalid mortality table: {0}")]
    InvalidMortality(String),
    #[error("invalid preference parameters: {0}")]
    InvalidPreferences(String),
    #[error("value {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },
    #[error("negative cashflow {value} at grid index {t}, node {node}")]
    NegativeCashflow { t: usize, node: usize, value: f64 },
    #[error("cashflow not replicable: {0}")]
    NotReplicable(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("contraction condition violated: C_m * dt = {0} >= 1")]
    NotContractive(f64),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;
