//! Discrete Klein-Gordon equation with a quasi-periodic potential.
//!
//! The lattice operator is `(H x)_n = -(x_{n+1} + x_{n-1}) + P(theta + n omega) x_n`
//! and the linear flow `u'' = -(H + 3) u` is computed exactly through an
//! eigendecomposition of a Dirichlet section. The remaining modules handle the
//! Schrodinger cocycle, its KAM reduction, Bloch waves and the oscillatory
//! integrals that control dispersive decay.

pub mod cocycle;
pub mod dispersion;
mod error;
pub mod evolve;
pub mod kam;
mod linalg;
pub mod model;
pub mod operator;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};
