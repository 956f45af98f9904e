//! Synchronization analysis for coupled map lattices with time-varying
//! stochastic coupling.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, stochastic matrices, skew projection
//! - [`hajnal`]: Hajnal diameter, scramblingness, the Hajnal inequality
//! - [`graph`]: coupling graphs, unions, spanning trees
//! - [`source`]: seeded matrix sequences and window products
//! - [`topology`]: blinking and blurring graph processes
//! - [`spectral`]: diameter, projection JSR and Lyapunov estimators
//! - [`jsr`]: joint spectral radius bounds for finite sets
//! - [`cml`]: coupled map lattice simulation and the sync criterion
//! - [`config`]: experiment configuration and runners

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cml;
pub mod config;
pub mod error;
pub mod graph;
pub mod hajnal;
pub mod jsr;
pub mod linalg;
pub mod source;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};
