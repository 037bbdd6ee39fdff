//! Prioritizes unlabeled classifier inputs by predicted bug-revealing
//! capability.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod testrank;

pub use error::{Error, Result};
