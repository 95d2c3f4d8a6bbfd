//! Variational estimation of `−log E[e^{−f}]` on discrete Wiener space.
//!
//! The central identity is
//!
//! ```text
//! −log E[e^{−f}] = inf_u E[ f(W + u) + ½|u|²_H ]
//! ```
//!
//! over adapted drifts `u`. The crate provides the path space and its
//! Cameron–Martin geometry ([`wiener`]), a catalog of functionals with
//! derivative densities ([`functionals`]), adapted drifts and Girsanov
//! weights ([`girsanov`]), the variational estimators and the finite-space
//! oracle ([`variational`]), drift solvers ([`solvers`]) and strong SDE
//! diagnostics ([`sde`]).

pub mod error;
pub mod functionals;
pub mod girsanov;
pub mod sde;
pub mod solvers;
pub mod stats;
pub mod variational;
pub mod wiener;

pub use error::{Error, Result};
pub use functionals::{FunctionalKind, FunctionalSpec, MalliavinDensity, RunningFn, TerminalFn};
pub use girsanov::{
    apply_shift, importance_estimate, DriftPolicy, Feature, FeedbackDescriptor, MarkovFeedback, ParametricBasis, RegressionTable,
    ShiftedBatch,
};
pub use sde::{conditioned_interval_experiment, invertibility_probe, left_inverse_residual, solve_strong_sde, InvertibilityReport};
pub use solvers::{
    foellmer_terminal_drift, grad_descent_optimize, htransform_interval_drift, picard_solve, picard_step, QuadratureRule,
    RegressionSpec,
};
pub use stats::{EstimateMethod, EstimateReport};
pub use variational::{gap_diagnostic, j_estimate, mc_neg_log_laplace, FiniteSpace, GapReport};
pub use wiener::{sample_brownian, BrownianBatch, CMElement, TimeGrid};
