//! Open-set active learning laboratory.
//!
//! Implements entropic open-set sample selection (closed-set and
//! distance-based entropy scores over one-vs-all binary heads and
//! active-unknown cluster structure), FINCH first-neighbor clustering,
//! small trainable MLPs with hand-derived gradients, baseline query
//! strategies, and a reproducible pool-based annotation harness.
//!
//! All numeric modules are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the harness and CLI run in double precision via the aliases below.

pub mod alloop;
pub mod config;
pub mod data;
pub mod error;
pub mod finch;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod nnkit;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod scoring;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used by the experiment harness and the CLI.
pub type Dataset64 = data::Dataset<f64>;
pub type Sample64 = data::Sample<f64>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type Mlp64 = nnkit::Mlp<f64>;
pub type ModelBundle64 = nnkit::ModelBundle<f64>;
pub type Partition64 = finch::Partition<f64>;
pub type ScoreTable64 = scoring::ScoreTable<f64>;
