//! Lifting metrics on orthonormal frame bundles.

pub mod cli;
pub mod dsl;
pub mod error;
pub mod frame;
pub mod gh;
pub mod holonomy;
pub mod lie;
pub mod oneill;
pub mod ode;
pub mod riemann;

pub use error::{Error, Result};
