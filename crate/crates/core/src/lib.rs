//! Exact simulation and threshold analytics for the flock contact process on
//! Z^d: every site carries a flock of `0..=N` individuals, flocks grow
//! internally at `i * phi`, full flocks push births onto their neighbours at
//! rate `lambda`, and disasters wipe out a whole flock at rate 1.

pub mod analytics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod simulator;

pub use error::{FlockError, Result};
pub use model::{Configuration, Geometry, ModelParams, Phi, Site};
