//! Two-stage engine for truthful reasoning on synthetic sycophancy tasks.
//!
//! Stage 1 searches for diverse reasoning trajectories with an
//! uncertainty-adaptive Monte Carlo tree search whose per-step rewards are
//! information gains over the answer distribution. Stage 2 fine-tunes a
//! tabular softmax micro-policy on the collected trajectories with a
//! dense-reward clipped trust-region objective. Everything is deterministic
//! given a seed, and small enough that every quantity has a brute-force
//! oracle.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod hashes;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod progress;
pub mod remote;
pub mod script;
pub mod search;
pub mod task;
pub mod vocab;

pub use error::{Error, Result};
