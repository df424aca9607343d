//! Provable Lipschitz and curvature bounds for sequential residual networks,
//! and the closed-form robustness and attack certificates built on them.
//!
//! Modules, bottom-up:
//! - [`linalg`]: dense matrices and the operator norms every bound consumes.
//! - [`activations`]: slope-restricted activations and anchored constants.
//! - [`model`]: residual blocks, forward passes and analytic Jacobians.
//! - [`lipschitz`]: naive, loop-transformed and LipLT Lipschitz bounds.
//! - [`curvature`]: layer Jacobian-Lipschitz bounds and their composition.
//! - [`certify`]: zeroth/first-order radii and attack certificates.
//! - [`oracle`]: brute-force lower bounds used to validate every bound.
//! - [`format`], [`report`]: model/data files and JSON reports.
//! - [`fixture`]: seeded test networks.
//! - [`verify`]: the dominance suite behind `curvcert verify`.

// `!(x >= 0.0)` is the NaN-rejecting check throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod certify;
pub mod curvature;
pub mod error;
pub mod fixture;
pub mod format;
pub mod linalg;
pub mod lipschitz;
pub mod model;
pub mod oracle;
pub mod report;
pub mod verify;

pub use error::{CertError, Result};
