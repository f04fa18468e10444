//! Localization of multiple co-channel emitters from received signal
//! strength under log-normal shadowing.
//!
//! The pipeline has two stages. [`srwac`] produces an initial estimate by
//! sparse recovery on a grid, thresholding and clustering. [`mle`] refines
//! it by maximizing a likelihood in which each sensor's received sum of
//! log-normal powers is approximated by a single log-normal ([`fw`]).
//! [`eval`] runs Monte-Carlo experiments over both.

pub mod boxqp;
pub mod channel;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fw;
pub mod mle;
pub mod rng;
pub mod scenario;
pub mod srwac;

pub use error::{Error, Result};
