//! Matrix-free evaluation of phi-function linear combinations with an
//! adaptive Krylov method, plus the exponential integrators and stiff PDE
//! benchmark problems built on top of it.
//!
//! The entry point for most uses is [`kiops`], which evaluates
//!
//! ```text
//! w(T) = phi_0(T A) b_0 + T phi_1(T A) b_1 + ... + T^p phi_p(T A) b_p
//! ```
//!
//! given nothing but the action `x -> A x` of the operator. The building
//! blocks are public: the [`dense`] exponential kernel, the slow reference
//! evaluations in [`phi`], the augmented matrix-free operator in
//! [`operator`], and the incomplete orthogonalization in [`iop`]. The
//! [`epirk`] module provides four exponential time integrators driven by the
//! solver, with the stiff reaction-diffusion benchmarks in [`problems`].
//!
//! A worked guide lives in the `book/` directory of the repository; its code
//! snippets are compiled and run as doc-tests of the companion guide crate.

#![forbid(unsafe_code)]

pub mod dense;
pub mod epirk;
pub mod iop;
pub mod operator;
pub mod phi;
pub mod problems;
pub mod solver;

pub use dense::{expm, DenseMatrix};
pub use epirk::{integrate, remainder, step, EpirkScheme, Integration, OdeProblem};
pub use iop::{iop_extend, KrylovState};
pub use operator::{tail_exact, AugmentedSystem, DenseOperator, LinearOperator};
pub use phi::{phi_combination_dense, phi_dense, phi_dense_series, phi_scalar};
pub use solver::{
    acceptance, cost_exp, cost_iop, cost_model, kiops, projected_step, PhiRequest, SolveResult,
    SolveStats, StepController, Task,
};

/// Errors reported by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Mismatched or invalid dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Non-finite values or inputs outside a kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A request that violates the solver's contract.
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// The adaptive loop gave up.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// Unknown benchmark problem id.
    #[error("unknown problem '{0}' (expected allen-cahn, adr, brusselator, gray-scott or semilinear)")]
    UnknownProblem(String),
    /// Unknown integrator id.
    #[error("unknown scheme '{0}' (expected epirk4s3, epirk4s3a, epirk5p1 or exprb5s3)")]
    UnknownScheme(String),
    /// A time step of an integration failed.
    #[error("integration step {step} (t = {t}): {source}")]
    StepFailed {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
