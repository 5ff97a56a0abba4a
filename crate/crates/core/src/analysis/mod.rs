//! Contraction/variance diagnostics and convergence-bound evaluators.

mod bounds;
mod estimate;

pub use bounds::{
    decaying_server_lr, rate_factor, sgd_h, sgd_q, convergence_bound, local_correction_lr, BoundInputs,
    BoundReport,
};
pub use estimate::{
    estimate_h, estimate_q, residual_landscape, ContractionReport, LandscapePoint, VarianceReport,
};
