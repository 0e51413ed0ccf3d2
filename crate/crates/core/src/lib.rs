//! Monte Carlo simulation of Walsh Brownian motion and of couplings of
//! solutions to the interface SDE on a metric star graph.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod noise;
pub mod parallel;
pub mod sde_sim;
pub mod star_graph;
pub mod stats;

pub use error::{Error, Result};
