//! Numerical toolkit for scalar linear DDEs with two delays,
//!
//! ```text
//! x'(t) = -a1 x(t - tau1) - a2 x(t - tau2),
//! ```
//!
//! and their small polynomial perturbations. The crate locates Hopf
//! bifurcation points in tau2, builds the normalized center-space bases,
//! averages the reduced amplitude equation, predicts periodic solutions,
//! and verifies the predictions against direct method-of-steps simulation.

pub mod averaging;
pub mod center_basis;
pub mod config;
pub mod dde;
pub mod error;
pub mod harness;
pub mod linear_analysis;

pub use error::{Error, Result};
pub use num_complex::Complex64;
