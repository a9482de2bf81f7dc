//! Extremes of one-dimensional branching random walk.
//!
//! The crate calibrates the speed and tilt constants of a branching random
//! walk, computes the exact law of the maximum on lattices, simulates pruned
//! populations with reproducible counter-based streams, and checks the
//! limiting tail and Gumbel-mixture behaviour of the centred maximum.

pub mod analysis;
pub mod ballot;
pub mod error;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod tilt;

pub use error::{BrwError, Result};
pub use model::{calibrate, IncrementLaw, ModelConstants, OffspringLaw};
