//! Mass-conserving semi-discrete and MBO schemes for phase separation on
//! weighted graphs, with oracles, multi-class variants and trajectory tools.

// Negated comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod multiclass;
pub mod oracles;
pub mod par;
pub mod random;
pub mod scheme;
pub mod trajectory;

pub use error::{Error, Result};
pub use graph::{Edge, Field, Graph, Spectrum};
pub use scheme::{
    dual_certificate, ginzburg_landau, lyapunov_gradient, lyapunov_h, mbo_is_unique, mbo_step,
    recover_beta, sd_residual, sd_step, solve_nu, threshold_levels, DualCertificate, LyapunovValue,
    Multiplier, NuSolution, SchemeParams, StepResult, ThresholdLevels,
};
