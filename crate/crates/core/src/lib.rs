//! Phase-field approximation of grain-boundary energies with point-group
//! symmetry.
//!
//! The crate covers finite point groups and their quotient metric, the
//! one-dimensional cell problem that defines the surface energy density
//! `g_λ`, grid minimization of the regularized energies, the sharp-interface
//! limit, and segmentation of synthetic polycrystal images.

// `!(x > 0.0)` is meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod error;
pub mod exec;
pub mod field;
pub mod image;
pub mod manifold;
pub mod matrix;
pub mod optimize;
pub mod phasefield;
pub mod pointgroup;
pub mod segmentation;
pub mod sharp;

pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::MatrixD;
pub use pointgroup::PointGroup;
