//! Sharpness-regularized optimizers and continual-learning plasticity
//! benchmarks on MNIST.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode engine over dense matrices with exact
//!   Hessian-vector products (forward-over-reverse).
//! * [`rng`]: deterministic, purpose-tagged random streams.
//! * [`model`]: the ReLU multilayer perceptron, its initialization, loss and
//!   accuracy.
//! * [`optim`]: SGD, SAM and gradient-norm-penalty step rules.
//! * [`probes`]: top Hessian eigenvalue and local Lipschitz estimates.
//! * [`data`]: IDX ingestion plus permuted and class-pair task streams.
//! * [`harness`]: runs training settings across task streams and seeds.
//! * [`report`]: CSV records, markdown summary tables and SVG plots.

pub mod autodiff;
pub mod data;
mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod probes;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod vecops;

pub use error::{Error, Result};

/// Dense parameter-space vector (gradients, Hessian-vector products, search
/// directions), laid out in canonical parameter order.
pub type FlatVector = Vec<f64>;
