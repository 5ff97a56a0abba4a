//! Simulation and analysis toolkit for federated optimization with adaptive
//! client optimizers.
//!
//! Every round, each sampled client restarts its optimizer state, runs a fixed
//! number of local steps, and ships its model delta (optionally normalized by
//! the accumulated preconditioner mass) to the server, which aggregates the
//! deltas into a pseudo-gradient for its own optimizer.
//!
//! The crate is split along those lines:
//!
//! - [`client_opt`]: the local operator (SGD, fixed-preconditioner GD,
//!   AdaGrad, Adam, Yogi) with per-round restart.
//! - [`correction`]: local and global correction of client deltas.
//! - [`server_opt`]: aggregation, client sampling, and server optimizers.
//! - [`problems`]: quadratic and logistic-regression problem families with
//!   gradient oracles and closed-form fixed points.
//! - [`analysis`]: contraction/variance estimators and convergence bounds.
//! - [`sim`]: experiment configuration, the round loop, and metrics output.

pub mod analysis;
pub mod client_opt;
pub mod correction;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod server_opt;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{DiagMatrix, ParamVector};
