//! Complete-market model: one risk-free asset and lognormal risky assets.
//!
//! Pricing and replication run on a recombining binomial lattice (one risky
//! asset); Monte Carlo scenario sets are for evaluation only.

mod lattice;
mod model;
mod scenario;

pub use lattice::{Lattice, NodeField, Replication};
pub use model::{MarketModel, RiskyAsset};
pub use scenario::{simulate_paths, Measure, ScenarioSet};
