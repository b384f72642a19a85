//! Discretization-free Bayesian inversion for linear Gaussian inverse problems.
//!
//! The unknown is never expanded in a basis. Every posterior quantity is a
//! finite matrix whose entries are inner products of covariance kernels with
//! test functions, evaluated by quadrature. The fan-beam tomography geometry
//! provides the forward map `ψ ↦ Aψ` on detector device functions.
//!
//! Module map:
//! - [`quadrature`]: Gauss–Legendre rules and integration over intervals,
//!   segments, cones and products of domains.
//! - [`kernels`]: stationary prior kernels and the detector noise model.
//! - [`measurement`]: test functions and measurement sets.
//! - [`geometry`]: fan-beam acquisition and the pushforward `Aψ`.
//! - [`assembly`]: the joint covariance blocks.
//! - [`posterior`]: Gaussian conditioning, reinterrogation and sampling.
//! - [`discretized`]: the truncated trigonometric comparator.
//! - [`phantom`]: synthetic ground truth and data generation.
//! - [`io`]: CSV, binary matrix and PGM writers.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod discretized;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod measurement;
pub mod phantom;
pub mod posterior;
pub mod quadrature;

pub use error::{Error, Result};

/// A point in the plane.
pub type Point2 = [f64; 2];
