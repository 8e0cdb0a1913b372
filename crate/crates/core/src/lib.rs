//! Pricing, hedging and stopping of game (Israeli) contracts in nonlinear markets.
//!
//! Each party's acceptable price is the initial value of a doubly reflected BSDE solved on a
//! recombining binomial lattice. Every price can be cross-checked against a brute-force
//! Dynkin-game oracle and against forward replication along all paths.

pub mod cli;
pub mod drbsde;
pub mod error;
pub mod generator;
pub mod model;
pub mod oracle;
pub mod pricing;
pub mod replication;

pub use error::{Error, Result};
