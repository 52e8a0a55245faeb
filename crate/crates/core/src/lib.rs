//! Constrained soft actor-critic with meta-gradient hyperparameter tuning.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense matrices, ReLU multilayer perceptrons with exact reverse-mode
//!   gradients (parameters and inputs), SGD and RMSProp.
//! - [`models`]: tanh-squashed Gaussian policy, twin reward/safety critics, polyak targets.
//! - [`buffers`]: the transition buffer `D`, the safety buffer `D_s` and the initial-state
//!   buffer `D_0`.
//! - [`cmdp`]: the environment contract, three small constrained environments and an exact
//!   value-iteration oracle for the safety critic on the tabular chain.
//! - [`algo`]: critic regression, the sequential `ν → φ → ε → α` update, baselines and the
//!   finite-difference gradient-check harness.
//! - [`trainer`]: the end-to-end training loop, evaluation and metrics.
//!
//! All arithmetic is `f64`; every source of randomness is a labelled child of one seed.

pub mod algo;
pub mod buffers;
pub mod cmdp;
pub mod codec;
pub mod diffcore;
mod error;
pub mod models;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
