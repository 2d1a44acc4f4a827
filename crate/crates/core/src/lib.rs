//! Finite element laboratory for reaction–diffusion equations on a thin
//! domain with an outward cusp and on its degenerate weighted 1D limit.

pub mod attractor;
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod dynamics;
pub mod eigen;
pub mod elliptic;
pub mod equilibria;
pub mod error;
mod fem;
pub mod geometry;
pub mod quadrature;
pub mod rate;
pub mod sparse;
pub mod transfer;

pub use error::{Error, Result};
