//! End-to-end geometric constellation shaping for Wiener phase-noise
//! channels, with a differentiable blind phase search in the training loop
//! and channel-condition inputs on both the mapper and the demapper.

pub mod bps;
pub mod channel;
pub mod cli;
pub mod constellation;
pub mod error;
pub mod evalsuite;
pub mod nnkit;
pub mod oracle;
pub mod rng;
pub mod selftest;
pub mod shaping;
pub mod trainer;

pub use error::{Error, Result};
