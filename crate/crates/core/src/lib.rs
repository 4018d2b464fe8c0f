//! Space-time Galerkin boundary elements for 2D elastodynamics with unilateral
//! (Signorini) contact against rigid, possibly moving obstacles.
//!
//! The pipeline is: [`geometry`] builds the mesh and DOF layout, [`assembly`]
//! produces the block lower-triangular Toeplitz system from the time-integrated
//! [`kernels`] using [`quadrature`], [`mot_solver`] marches it in time and
//! [`contact`] wraps the march in a projected Uzawa iteration. [`postprocess`]
//! and [`cli`] turn solutions into traces, energies and convergence tables.

pub mod assembly;
pub mod cli;
pub mod contact;
pub mod dual;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod kernels;
pub mod mot_solver;
pub mod postprocess;
pub mod quadrature;

pub use error::{Error, Result};
