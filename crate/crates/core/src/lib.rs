//! Two-dielectric transmission problem under a deformable plate: Dirichlet
//! energy, its shape derivative and obstacle-constrained plate equilibria.

pub mod energy;
pub mod error;
pub mod family;
pub mod geometry;
pub mod minimizer;
pub mod plate;
pub mod shape;
pub mod sparse;
pub mod transmission;

pub use error::{Error, Result};
