//! Test-time-scaling engine and verifiable-reward toolkit.
//!
//! The crate covers the full loop: streaming confidence statistics,
//! confidence-gated parallel reasoning with early stopping, answer
//! extraction and equivalence checking, reward functions for math /
//! code / science / format, group-relative policy-optimization loss
//! kernels with batch assembly, and the RL data-curation pipeline.
//! Generation runs against a live streaming backend (feature `live`) or
//! a deterministic fixture backend for tests and benchmarks.

pub mod backend;
pub mod confidence;
pub mod curation;
pub mod deepconf;
pub mod error;
pub mod gateway;
pub mod grpo;
pub mod report;
pub mod seed;
pub mod verify;
pub mod vote;

pub use error::{Error, Result};
