//! Approximate Forster transforms of finite point sets.
//!
//! The pipeline computes an invertible `A` putting the normalized points
//! `Ax/‖Ax‖` in approximate radial isotropic position, or returns a proper
//! subspace holding too many of the points for such an `A` to exist. A
//! halfspace learner built on the transform lives in [`learner`].
//!
//! Everything runs in `f64` with explicit tolerances. Randomness comes from
//! explicit seeds only, so every entry point is deterministic.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod eigen;
pub mod error;
pub mod forster;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod rng;
pub mod rounding;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::{MomentMatrix, PointSet, Subspace, Transform};

/// Structural tolerance used for orthonormality, symmetry and similar checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative residual below which a point counts as lying in a subspace.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-300;
