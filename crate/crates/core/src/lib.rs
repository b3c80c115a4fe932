//! Deterministic smart-grid simulator.
//!
//! Each five-minute tick runs four stages: a per-house knapsack for a first
//! allocation, DSM strategy selection and an auction with bounded feedback
//! between microgrids and producers, incremental max-flow routing over the
//! transmission network, and a final knapsack distribution with
//! redistribution of leftovers inside each microgrid.
//!
//! Energy is integer Wh throughout. Scores (utilities, strategy values, α)
//! are generic over [`Scalar`]; use [`Rational`] for exact arithmetic or
//! `f64` for speed.

pub mod auction;
pub mod dsm;
pub mod fixtures;
pub mod flow;
pub mod generate;
pub mod io;
pub mod knapsack;
pub mod model;
pub mod network;
pub mod scalar;
pub mod sim;
pub mod verify;

pub use scalar::Scalar;

/// Energy in watt-hours per tick.
pub type Wh = i64;

/// Exact rational scores.
pub type Rational = num_rational::Ratio<i128>;

pub type ExactSimulator = sim::Simulator<Rational>;
pub type FloatSimulator = sim::Simulator<f64>;
pub type ExactStrategy = dsm::Strategy<Rational>;
pub type ExactTickResult = sim::TickResult<Rational>;
