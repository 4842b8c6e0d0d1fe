//! C ABI for the pdmm solvers: opaque handles, plain-old-data options, and
//! integer status codes. The matching header is generated into
//! `include/pdmm.h` at build time.
//!
//! Ownership rules: every `*_new`-style constructor hands the caller an
//! opaque pointer that must be released with the matching `*_free`; output
//! parameters are written only on `PDMM_STATUS_OK`. `pdmm_last_error_message`
//! returns a thread-local description of the most recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DMatrix;

use pdmm::problems::{
    build_group_lasso, build_rpca, build_toy_qp, gen_group_lasso_synthetic,
    gen_rpca_synthetic, Instance, ToyQpSpec,
};
use pdmm::solver::{solve, Problem, SamplerScheme, SolveOutcome, SolverConfig, StepRule, StopRule};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidConfig = 2,
    ValidationFailed = 3,
    NumericalFailure = 4,
    Diverged = 5,
    IoError = 6,
    /// An internal invariant was violated; the error message has details.
    Internal = 7,
}

fn status_of(err: &pdmm::Error) -> PdmmStatus {
    match err {
        pdmm::Error::Dimension(_) | pdmm::Error::Config(_) => PdmmStatus::InvalidConfig,
        pdmm::Error::Validation(_) => PdmmStatus::ValidationFailed,
        pdmm::Error::Numerical(_) => PdmmStatus::NumericalFailure,
        pdmm::Error::Divergence { .. } => PdmmStatus::Diverged,
        pdmm::Error::Io(_) => PdmmStatus::IoError,
    }
}

fn guard<F: FnOnce() -> Result<PdmmStatus, pdmm::Error>>(f: F) -> PdmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => {
            set_error(err.to_string());
            status_of(&err)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in solver".into());
            set_error(msg);
            PdmmStatus::Internal
        }
    }
}

/// Solver variant selector for [`PdmmOptions`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmmVariant {
    /// Canonical table-driven step sizes.
    Pdmm = 0,
    /// Splitting-ADMM equivalents (all blocks, τ = 1/J).
    Sadmm = 1,
    /// Proximal Jacobian (all blocks, τ = 1, derived proximal weights).
    Pjadmm = 2,
    /// Randomized dual updates (`k_dual` rows per iteration).
    Rdbcd = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmmSampler {
    Uniform = 0,
    Cyclic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmmStop {
    /// Relative x/y change below `tol`.
    XyChange = 0,
    /// Constraint residual norm below `tol`.
    PrimalResidual = 1,
}

/// Plain-old-data solve options; obtain defaults from
/// [`pdmm_options_default`] and adjust fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PdmmOptions {
    pub variant: PdmmVariant,
    /// Primal blocks per iteration; 0 selects all blocks.
    pub k: usize,
    /// Dual rows per iteration (rdbcd); 0 selects all rows.
    pub k_dual: usize,
    pub rho: f64,
    pub sampler: PdmmSampler,
    pub stop: PdmmStop,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Worker threads for block updates; 0 defers to `PDMM_THREADS`.
    pub threads: usize,
}

/// Opaque problem handle.
pub struct PdmmProblem {
    inner: Problem,
}

/// Opaque result handle.
pub struct PdmmResult {
    objective: f64,
    primal_residual: f64,
    iterations: usize,
    converged: bool,
    x: Vec<f64>,
}

/// Default options: canonical variant over all blocks, ρ = 1, the relative
/// change rule at 1e-4, at most 10000 iterations.
#[no_mangle]
pub extern "C" fn pdmm_options_default() -> PdmmOptions {
    PdmmOptions {
        variant: PdmmVariant::Pdmm,
        k: 0,
        k_dual: 0,
        rho: 1.0,
        sampler: PdmmSampler::Uniform,
        stop: PdmmStop::XyChange,
        tol: 1e-4,
        max_iter: 10_000,
        seed: 0,
        threads: 0,
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call from the same thread.
#[no_mangle]
pub extern "C" fn pdmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn write_problem(
    out: *mut *mut PdmmProblem,
    problem: Result<Problem, pdmm::Error>,
) -> Result<PdmmStatus, pdmm::Error> {
    let problem = problem?;
    *out = Box::into_raw(Box::new(PdmmProblem { inner: problem }));
    Ok(PdmmStatus::Ok)
}

/// Builds a synthetic noise + sparse + low-rank decomposition problem.
/// Pass `gamma2 <= 0` or `gamma3 <= 0` to use the data-driven defaults.
///
/// # Safety
/// `out` must be a valid pointer to a `PdmmProblem*` slot.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_rpca_synthetic(
    m: usize,
    n: usize,
    rank: usize,
    seed: u64,
    gamma2: f64,
    gamma3: f64,
    out: *mut *mut PdmmProblem,
) -> PdmmStatus {
    if out.is_null() {
        set_error("out is null".into());
        return PdmmStatus::NullArgument;
    }
    guard(|| {
        let inst = gen_rpca_synthetic(m, n, rank, seed)?;
        let g2 = if gamma2 > 0.0 { gamma2 } else { inst.gamma2 };
        let g3 = if gamma3 > 0.0 { gamma3 } else { inst.gamma3 };
        write_problem(out, build_rpca(&inst.observed, g2, g3))
    })
}

/// Builds the decomposition problem for caller-provided data
/// (`observed` holds `m·n` entries in row-major order).
///
/// # Safety
/// `observed` must point to `m·n` readable doubles; `out` must be a valid
/// slot.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_rpca_from_data(
    m: usize,
    n: usize,
    observed: *const f64,
    gamma2: f64,
    gamma3: f64,
    out: *mut *mut PdmmProblem,
) -> PdmmStatus {
    if out.is_null() || observed.is_null() {
        set_error("null argument".into());
        return PdmmStatus::NullArgument;
    }
    let data = std::slice::from_raw_parts(observed, m * n);
    guard(|| {
        let mat = DMatrix::from_fn(m, n, |r, c| data[r * n + c]);
        write_problem(out, build_rpca(&mat, gamma2, gamma3))
    })
}

/// Builds a synthetic overlapping group lasso problem (chain-structured
/// groups).
///
/// # Safety
/// `out` must be a valid pointer to a `PdmmProblem*` slot.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_group_lasso_synthetic(
    m: usize,
    groups: usize,
    group_size: usize,
    overlap: usize,
    seed: u64,
    out: *mut *mut PdmmProblem,
) -> PdmmStatus {
    if out.is_null() {
        set_error("out is null".into());
        return PdmmStatus::NullArgument;
    }
    guard(|| {
        let inst = gen_group_lasso_synthetic(m, groups, group_size, overlap, seed)?;
        write_problem(out, build_group_lasso(&inst))
    })
}

/// Builds a random structured quadratic test problem with a known solution.
///
/// # Safety
/// `out` must be a valid pointer to a `PdmmProblem*` slot.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_toy_qp(
    row_blocks: usize,
    row_size: usize,
    col_blocks: usize,
    col_size: usize,
    seed: u64,
    out: *mut *mut PdmmProblem,
) -> PdmmStatus {
    if out.is_null() {
        set_error("out is null".into());
        return PdmmStatus::NullArgument;
    }
    guard(|| {
        let spec = ToyQpSpec::new(
            vec![row_size; row_blocks],
            vec![col_size; col_blocks],
            seed,
        );
        write_problem(out, build_toy_qp(&spec))
    })
}

/// Loads a problem from a saved instance file (JSON schema
/// `pdmm-instance-v1`).
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_from_file(
    path: *const c_char,
    out: *mut *mut PdmmProblem,
) -> PdmmStatus {
    if out.is_null() || path.is_null() {
        set_error("null argument".into());
        return PdmmStatus::NullArgument;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8".into());
        return PdmmStatus::InvalidConfig;
    };
    let path = std::path::PathBuf::from(path);
    guard(|| {
        let inst = Instance::load(&path)?;
        write_problem(out, inst.build())
    })
}

/// # Safety
/// `problem` must come from a constructor of this library and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_free(problem: *mut PdmmProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of variable blocks.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_num_blocks(problem: *const PdmmProblem) -> usize {
    if problem.is_null() {
        return 0;
    }
    (*problem).inner.num_primal_blocks()
}

/// Total primal dimension.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_problem_dim(problem: *const PdmmProblem) -> usize {
    if problem.is_null() {
        return 0;
    }
    (*problem).inner.matrix().partition().total_cols()
}

fn solver_config(problem: &Problem, opts: &PdmmOptions) -> SolverConfig {
    let j = problem.num_primal_blocks();
    let i = problem.num_dual_blocks();
    let k = if opts.k == 0 { j } else { opts.k };
    let mut cfg = SolverConfig::pdmm(k);
    cfg.step_rule = match opts.variant {
        PdmmVariant::Pdmm => StepRule::Table1,
        PdmmVariant::Sadmm => StepRule::Sadmm,
        PdmmVariant::Pjadmm => StepRule::Pjadmm,
        PdmmVariant::Rdbcd => StepRule::Rdbcd {
            k_dual: if opts.k_dual == 0 { i } else { opts.k_dual },
        },
    };
    cfg.rho = opts.rho;
    cfg.sampler = match opts.sampler {
        PdmmSampler::Uniform => SamplerScheme::UniformSubsets,
        PdmmSampler::Cyclic => SamplerScheme::CyclicPartition,
    };
    cfg.stop = match opts.stop {
        PdmmStop::XyChange => StopRule::XyChange { tol: opts.tol },
        PdmmStop::PrimalResidual => StopRule::PrimalResidual { tol: opts.tol },
    };
    cfg.max_iter = opts.max_iter;
    cfg.seed = opts.seed;
    if opts.threads > 0 {
        cfg.threads = Some(opts.threads);
    }
    cfg
}

/// Runs the configured solve. On success the caller owns `*out`.
///
/// # Safety
/// `problem` must be a live handle; `options` and `out` must be valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn pdmm_solve(
    problem: *const PdmmProblem,
    options: *const PdmmOptions,
    out: *mut *mut PdmmResult,
) -> PdmmStatus {
    if problem.is_null() || options.is_null() || out.is_null() {
        set_error("null argument".into());
        return PdmmStatus::NullArgument;
    }
    let problem = &(*problem).inner;
    let opts = *options;
    guard(|| {
        let cfg = solver_config(problem, &opts);
        let outcome: SolveOutcome = solve(problem, cfg)?;
        let last = outcome.trace.last().expect("at least one record");
        let result = PdmmResult {
            objective: last.objective,
            primal_residual: last.primal_residual,
            iterations: outcome.iterations,
            converged: outcome.stop == pdmm::solver::StopReason::Tolerance,
            x: outcome.x.data().iter().copied().collect(),
        };
        *out = Box::into_raw(Box::new(result));
        Ok(PdmmStatus::Ok)
    })
}

/// # Safety
/// `result` must come from [`pdmm_solve`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_free(result: *mut PdmmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_objective(result: *const PdmmResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).objective
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_primal_residual(result: *const PdmmResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).primal_residual
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_iterations(result: *const PdmmResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).iterations
}

/// 1 when the solve stopped on its tolerance, 0 on the iteration cap.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_converged(result: *const PdmmResult) -> i32 {
    if result.is_null() {
        return 0;
    }
    (*result).converged as i32
}

/// Length of the concatenated primal solution.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_x_len(result: *const PdmmResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).x.len()
}

/// Copies the concatenated primal solution into `buf`.
///
/// # Safety
/// `buf` must point to at least `len` writable doubles; `result` must be a
/// live handle.
#[no_mangle]
pub unsafe extern "C" fn pdmm_result_copy_x(
    result: *const PdmmResult,
    buf: *mut f64,
    len: usize,
) -> PdmmStatus {
    if result.is_null() || buf.is_null() {
        set_error("null argument".into());
        return PdmmStatus::NullArgument;
    }
    let x = &(*result).x;
    if len < x.len() {
        set_error(format!("buffer holds {len} entries but the solution has {}", x.len()));
        return PdmmStatus::InvalidConfig;
    }
    std::ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
    PdmmStatus::Ok
}
