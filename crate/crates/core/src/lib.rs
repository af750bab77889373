//! Continuum-mechanics transport of probability densities across a
//! pseudo-time axis, with the supporting numerics.

pub mod error;
pub mod nn;
pub mod numeric;
pub mod rng;

pub use error::{Error, Result};
pub mod ot_discrete;
pub mod transport;
pub mod density;
pub mod reduction;
pub mod cli;
pub mod manifold;
pub mod baseline;
pub mod pfode;
