//! Models for collectivised ("tontine-style") pension funds.
//!
//! The crate covers a discrete-time complete market realised as a recombining
//! binomial lattice, i.i.d. mortality on an evenly spaced consumption grid, the
//! von Neumann–Morgenstern, exponential Kihlstrom–Mirman and Epstein–Zin gain
//! functions with mortality, budget dynamics of finite and infinite
//! collectives, value-function solvers for homogeneous funds, the basic
//! management scheme for heterogeneous funds together with executable
//! acceptability checks, and a discretised verifier for the truncated
//! Epstein–Zin BSDE family.
//!
//! The crate is `no_std` (it needs `alloc`). The `parallel` feature pulls in
//! `std` and parallelises dynamic-programming sweeps within a time slice;
//! results are identical with and without it.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod ez_bsde;
pub mod fund;
pub mod grid;
pub mod heterogeneous;
pub mod market;
pub mod math;
pub mod mortality;
pub mod optimizer;
mod par;
pub mod preferences;
pub mod rng;

pub use error::{Error, Result};
pub use grid::TimeGrid;
