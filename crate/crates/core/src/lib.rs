//! Time-delay propagation of reduced observables of unitary linear systems,
//! specialised to one-electron reduced density matrices of time-dependent
//! configuration interaction.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense complex kernels (Kronecker products, Hermitian
//!   exponentials, thresholded pseudoinverses, flattening).
//! - [`delay_core`]: generic delay embedding for `y = R z` with `z` evolving
//!   under unitary steps, plus a Mori–Zwanzig reference propagator.
//! - [`ci_model`]: determinant index maps, the tensor `B` with `Q = B P`,
//!   and one-electron test systems.
//! - [`ground_truth`]: reference coefficient propagation.
//! - [`constraint_prop`]: the 1RDM delay propagator in Hermitian
//!   coordinates with trace and zero-pattern constraints.
//! - [`harness`]: experiments, metrics, sweeps and file output.

pub mod ci_model;
pub mod constraint_prop;
pub mod delay_core;
pub mod error;
pub mod ground_truth;
pub mod harness;
mod lapack;
pub mod numio;
pub mod numkit;
pub mod par;
pub mod random;

pub use error::{Error, Result};
