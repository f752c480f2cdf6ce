//! Discrete Gaussian federated aggregation.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece
//! of the protocol:
//!
//! - [`lattice`]: the quantization lattice, its modular wrap and the integer codec.
//! - [`discrete_gaussian`]: the exact lattice Gaussian sampler and its analytic helpers.
//! - [`accountant`]: Rényi DP curves, subsampling amplification, composition and
//!   conversion to `(ε, δ)`.
//! - [`compressor`]: clipping, randomized Hadamard rotation and stochastic quantization.
//! - [`secure_agg`]: pairwise masks over the cyclic group, exact noise shares and the
//!   server-side unmasking.
//! - [`fed_sim`]: the round loop, synthetic tasks and convergence reporting.
//! - [`metrics`]: closed-form MSE and communication bounds and their empirical
//!   counterparts.
//!
//! IO, configuration files and the command line live in the companion `dgfed` crate.

#![no_std]
#![forbid(unsafe_code)]
// NaN must fail validation, so range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod accountant;
pub mod compressor;
pub mod discrete_gaussian;
mod error;
pub mod fed_sim;
pub mod lattice;
pub mod metrics;
pub mod rng;
pub mod secure_agg;
pub mod special;

pub use error::{Error, Result};
