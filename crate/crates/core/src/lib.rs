//! Numerical laboratory for the first conformal eigenvalue.
//!
//! The crate minimizes the sharp-Sobolev functional `J_{g,h}` on discretized
//! compact manifolds, takes the extremal conformal factor `u`, and measures
//! the first eigenvalue of `g̃ = u^{4/(n−2)} g` against the round-sphere
//! value `n ω_n^{2/n}`.
//!
//! * [`manifold`] builds discrete manifolds and their operators.
//! * [`sobolev`] holds the constants, `J`, the Yamabe quotient and the
//!   admissibility checks.
//! * [`minimizer`] finds extremal fields and checks their optimality.
//! * [`spectrum`] computes conformal spectra and linearization diagnostics.
//! * [`lab`] runs configured experiments and writes reports.

mod descent;
pub mod eigen;
pub mod error;
pub mod lab;
pub mod linalg;
pub mod manifold;
pub mod minimizer;
pub mod sobolev;
pub mod spectrum;

pub use error::{Error, Result};
