//! Solvers for minimizing block-separable convex objectives under linear
//! coupling constraints:
//!
//! ```text
//! minimize   f(x) = Σ_j f_j(x_j)
//! subject to A x  = Σ_j A_j x_j = a
//! ```
//!
//! The main algorithm updates a randomly chosen subset of primal blocks in
//! parallel, then takes a damped dual gradient step followed by a dual
//! backward step. Step sizes adapt to the block sparsity of `A` (the number
//! of nonzero blocks per constraint row) and to the number of blocks updated
//! per iteration. Special-case presets cover splitting-based two-block ADMM
//! (sADMM), proximal Jacobian ADMM (PJADMM), and a variant that also
//! randomizes the dual block updates (RDBCD).
//!
//! The crate ships problem builders for robust PCA (noise + sparse + low-rank
//! decomposition) and overlapping group lasso, a proximal operator library,
//! convergence diagnostics, and a benchmark CLI (`pdmm run` / `pdmm compare`).

pub mod block;
pub mod cli;
pub mod diagnostics;
pub mod problems;
pub mod prox;
pub mod quadform;
pub mod sampler;
pub mod solver;
pub mod stepsize;

mod rng;

pub use block::{Block, BlockMatrix, BlockPartition, BlockVector, ZVector};
pub use diagnostics::{ErgodicAverage, Trace, TraceRecord};
pub use quadform::{build_pt, build_q, QuadForm};
pub use solver::{
    KktPoint, Problem, SamplerScheme, Solver, SolverConfig, StepRule, StopReason, StopRule,
    UpdateMode, UpdateRule,
};
pub use stepsize::{
    pjadmm_step_sizes, rdbcd_step_sizes, sadmm_step_sizes, table1_step_sizes, validity_check,
    StepConstants, StepSizes, ValidityReport,
};

pub(crate) use rng::seeded_rng;

/// Errors surfaced by problem construction, configuration, and solves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("divergence detected at iteration {iteration}: {message}")]
    Divergence {
        iteration: usize,
        message: String,
        /// Trace collected up to the failure, retained for post-mortems.
        trace: Trace,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
