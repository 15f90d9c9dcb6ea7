//! Observables and protocol drivers.

pub mod deterministic;
pub mod observables;
pub mod stochastic;
pub mod validation;

pub use deterministic::{run_deterministic, DeterministicRunResult, SpeciesProfile};
pub use observables::*;
pub use stochastic::{block_average, run_oracle, run_stochastic, OracleSeries, SpeciesSeries, StochasticOptions, StochasticRunResult};
