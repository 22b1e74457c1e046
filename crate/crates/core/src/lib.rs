//! Distributed power control for MIMO interference channels.
//!
//! The crate models a network of transmit-receive pairs that share a band,
//! precodes each direct link with its SVD, and runs the non-cooperative
//! power-control game in which every user water-fills against the
//! interference it sees. On top of the plain iterative water-filling it
//! provides uniqueness diagnostics for the equilibrium and the regularized,
//! merit-controlled and inexact variants that steer the game toward a
//! selected equilibrium, together with a Monte Carlo experiment runner.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod game;
pub mod precoding;
pub mod vi;
pub mod waterfill;

pub use error::{Error, Result};
