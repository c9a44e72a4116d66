//! Solver and verifier for two-player zero-sum linear-quadratic mean-field
//! games with leader–follower structure.
//!
//! The crate integrates the coupled Riccati equations of the game, builds
//! the equilibrium feedback gains, checks the convexity/concavity
//! certificates that characterize solvability, and verifies the value and
//! cost identities by Monte Carlo simulation of the mean/fluctuation
//! decomposition.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod auxiliary;
pub mod builtin;
pub mod error;
pub mod export;
pub mod linalg;
pub mod problem;
pub mod riccati;
pub mod schedule;
pub mod simulate;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
