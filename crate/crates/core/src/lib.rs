//! Lorentzian factorization machines.
//!
//! Sparse categorical features are embedded on the unit hyperboloid and an
//! instance is scored by pooling, over all feature pairs, the normalized
//! defect of the Lorentz-distance triangle inequality through the origin.
//! Training uses Riemannian SGD; a Euclidean factorization machine trained
//! with Adam is included as a baseline.

pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod explain;
pub mod geometry;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
