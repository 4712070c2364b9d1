//! Galerkin simulation and ladder-climbing control synthesis for the bilinear
//! system `dψ/dt = (A + u(t) B) ψ`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the spectral data of the pair `(A, B)`, coefficient-space
//!   states, projections and Galerkin compressions.
//! * [`engine`] propagates Galerkin systems exactly under piecewise-constant
//!   controls.
//! * [`pulse`] synthesizes single resonant transfers by averaging.
//! * [`ladder`] chains transfers into window steering with an explicit time
//!   bound.
//! * [`disperse`] computes and searches the dispersal maps `e^{KB}`.
//! * [`pipeline`] assembles the small-time plans and verifies them.
//! * [`findim`] collects finite-dimensional diagnostics (Lie rank, Killing
//!   norm, orbit distances).

// Links the system LAPACK behind the tridiagonal eigensolver.
extern crate openblas_src;

pub mod disperse;
pub mod engine;
pub mod error;
pub mod exact;
pub mod findim;
pub mod io;
pub mod ladder;
mod linalg;
pub mod model;
pub mod pipeline;
pub mod pulse;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
