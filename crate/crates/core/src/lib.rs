//! Finite-difference solver for backward-forward parabolic systems on the
//! flat torus,
//!
//! ```text
//! -u_t - a_ij u_ij + F(u, m, Du, Dm, x, t) = 0,   u(., T) = h[m(., T)]
//!  m_t - c_ij m_ij + G(u, m, Du, Dm, D^2 u, x, t) = 0,   m(., 0) = m0
//! ```
//!
//! by Picard iteration of the decoupling map that solves the forward equation
//! with frozen data and then the backward one. The couplings are truncated so
//! that the map is globally Lipschitz, and the fixed point is checked against
//! the truncation thresholds afterwards.

// negated comparisons are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod spectral;
pub mod stepper;
pub mod truncation;

pub use error::{Error, Result};
pub use fixed_point::{
    apply_t, fp_conservative_check, horizon_sweep, picard_solve, IterateState, IterationReport, PicardOptions,
    PicardOutcome, Status, SweepRow,
};
pub use grid::{Field, SpaceGrid, SpaceTimeField, TorusGrid};
pub use models::CouplingModel;
pub use truncation::{select_k, TruncationParams};
