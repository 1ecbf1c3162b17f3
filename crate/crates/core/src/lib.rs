//! Skew-aware distributed hash joins on a simulated shared-nothing cluster.
//!
//! The crate generates Zipf workloads ([`datagen`]), detects heavy hitters per
//! node ([`detector`]), routes skewed probe tuples with balanced partitioning
//! ([`bppr`]) or one of four baseline strategies ([`strategies`]), and replays
//! a whole join with byte and compute accounting ([`simulator`]).

pub mod bppr;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod simulator;
pub mod strategies;

pub use error::{Error, Result};
