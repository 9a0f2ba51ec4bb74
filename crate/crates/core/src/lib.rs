//! Semiclassical models of single-atom cavity QED obtained by orthogonal
//! projection of quantum master equations onto the manifold of product states
//! `rho_atom (x) |alpha><alpha|`.
//!
//! * [`hilbert`] holds the exact truncated-Fock model used as an oracle.
//! * [`manifold`] is the projection engine: tangent frame, Hilbert-Schmidt
//!   projection, residual norms.
//! * [`mbe`] has the closed-form projected Maxwell-Bloch equations, the classical
//!   (F = 1) limit, and steady-state analysis.
//! * [`sde`] has the projected homodyne filter and the homodyne/heterodyne
//!   stochastic simulation models.
//! * [`montecarlo`] runs trajectory ensembles and computes histograms and
//!   dwell statistics.
//! * [`cli`] wires everything into a reproducible experiment runner.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod hilbert;
pub mod manifold;
pub mod mbe;
pub mod montecarlo;
pub mod sde;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
