//! Numerical core for the stochastic thin-film equation with a repulsive
//! potential on a periodic interval.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod grid;
pub mod linalg;
pub mod noise;
pub mod stepper;

pub use error::{Error, Result};
