//! Simulation and policy optimisation for ultra-fast order dispatching
//! from a single depot.

pub mod ceilings;
pub mod error;
pub mod feasibility;
pub mod geo;
pub mod matching;
pub mod policies;
pub mod rng;
pub mod sim;
pub mod vfa;

pub use error::{OdpError, Result};
