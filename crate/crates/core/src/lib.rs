//! Backstepping boundary controllers for transport PDEs with spatial
//! Volterra nonlinearities.

pub mod charkernels;
pub mod error;
pub mod gapcascade;
pub mod inversion;
pub mod poly;
pub mod simplex;
pub mod simulator;
pub mod volterra;

pub use error::{Error, Result};
