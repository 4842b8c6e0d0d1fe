//! The main loop: randomized parallel primal block updates, a damped dual
//! gradient step, and the dual backward step.
//!
//! One iteration from state `(x, y, ŷ, r = Ax − a)`:
//!
//! ```text
//! pick K primal blocks I_t
//! x_j ← argmin f_j(x_j) + ⟨A_jᵀ(ŷ + ρr), x_j⟩ + (ρ/2)‖A_j(x_j − x_j_old)‖²
//!                        + η_j B(x_j, x_j_old)          (j ∈ I_t, in parallel)
//! r   ← r + Σ_{j ∈ I_t} A_j (x_j − x_j_old)
//! y_i ← y_i + τ_i ρ r_i           (selected dual rows; all rows by default)
//! ŷ_i ← y_i − ν_i ρ r_i           (every row)
//! ```
//!
//! Every selected block reads the same `(x, ŷ, r)` snapshot and the deltas
//! are folded in ascending block order, so results do not depend on thread
//! count or processing order.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DVector, Dyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockMatrix, BlockVector, ZVector};
use crate::diagnostics::{
    check_reference_feasible, BregmanKind, HContext, Trace, TraceRecord,
};
use crate::prox::BlockFunction;
use crate::quadform::{build_q, QuadForm};
use crate::sampler::{sample_dual_rows, Sampler};
use crate::stepsize::{
    pjadmm_step_sizes, rdbcd_step_sizes, sadmm_step_sizes, table1_step_sizes, validity_check,
    StepSizes,
};
use crate::{seeded_rng, Error, Result};

/// A primal/dual pair satisfying the optimality conditions, used as a
/// reference by the diagnostics.
#[derive(Debug, Clone)]
pub struct KktPoint {
    pub x: BlockVector,
    pub y: BlockVector,
}

/// A block-separable objective under a linear coupling constraint.
pub struct Problem {
    a: BlockMatrix,
    rhs: BlockVector,
    funcs: Vec<Arc<dyn BlockFunction>>,
    kkt: Option<KktPoint>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("row_blocks", &self.a.num_row_blocks())
            .field("col_blocks", &self.a.num_col_blocks())
            .field("has_kkt", &self.kkt.is_some())
            .finish()
    }
}

impl Problem {
    pub fn new(
        a: BlockMatrix,
        rhs: BlockVector,
        funcs: Vec<Arc<dyn BlockFunction>>,
    ) -> Result<Self> {
        if rhs.sizes() != a.partition().row_sizes() {
            return Err(Error::Dimension(
                "right-hand side does not conform to the row partition".into(),
            ));
        }
        if funcs.len() != a.num_col_blocks() {
            return Err(Error::Dimension(format!(
                "{} objective terms for {} column blocks",
                funcs.len(),
                a.num_col_blocks()
            )));
        }
        // A constraint row with no stored blocks has degree zero, which
        // leaves the dual step sizes undefined.
        for (i, d) in a.degrees().iter().enumerate() {
            if *d == 0 {
                return Err(Error::Validation(format!(
                    "constraint row block {i} touches no variable block"
                )));
            }
        }
        Ok(Self { a, rhs, funcs, kkt: None })
    }

    /// Attaches a KKT reference after checking it is feasible.
    pub fn with_kkt(mut self, kkt: KktPoint) -> Result<Self> {
        check_reference_feasible(&self.a, &self.rhs, &kkt.x)?;
        if kkt.y.sizes() != self.a.partition().row_sizes() {
            return Err(Error::Dimension(
                "reference dual does not conform to the row partition".into(),
            ));
        }
        self.kkt = Some(kkt);
        Ok(self)
    }

    pub fn matrix(&self) -> &BlockMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &BlockVector {
        &self.rhs
    }

    pub fn funcs(&self) -> &[Arc<dyn BlockFunction>] {
        &self.funcs
    }

    pub fn kkt(&self) -> Option<&KktPoint> {
        self.kkt.as_ref()
    }

    pub fn num_primal_blocks(&self) -> usize {
        self.a.num_col_blocks()
    }

    pub fn num_dual_blocks(&self) -> usize {
        self.a.num_row_blocks()
    }

    pub fn objective(&self, x: &BlockVector) -> f64 {
        self.funcs
            .iter()
            .enumerate()
            .map(|(j, f)| f.eval(&x.block_owned(j)))
            .sum()
    }

    /// Objective at the reference point, if one is attached.
    pub fn reference_objective(&self) -> Option<f64> {
        self.kkt.as_ref().map(|k| self.objective(&k.x))
    }
}

/// How the per-block subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Solve the composite subproblem exactly (prox for identity-like
    /// columns, a cached factorization for quadratic terms).
    Exact,
    /// Linearize `f_j` at the current point, keep the quadratic penalty,
    /// and add `η_j‖x_j − x_j_old‖²`.
    LinearizedF,
    /// Linearize the quadratic penalty and add `(η_j/2)‖x_j − x_j_old‖²`,
    /// turning the update into a pure prox step (requires
    /// `η_j ≥ ρ·λ_max(A_jᵀA_j)`).
    LinearizedPenalty,
    /// Linearize both; a plain gradient step with step `1/η_j`.
    LinearizedBoth,
}

/// Update mode plus per-block proximal weights.
#[derive(Debug, Clone)]
pub struct UpdateRule {
    pub mode: UpdateMode,
    /// `None` derives defaults: zeros for exact updates, `ρ·λ_max(A_jᵀA_j)`
    /// for the linearized modes.
    pub eta: Option<Vec<f64>>,
}

impl UpdateRule {
    pub fn exact() -> Self {
        Self { mode: UpdateMode::Exact, eta: None }
    }
}

/// Which step-size schedule to use.
#[derive(Debug, Clone)]
pub enum StepRule {
    /// The canonical table indexed by `(K, d_i)`.
    Table1,
    /// Randomized dual updates: only `k_dual` dual rows move per iteration.
    Rdbcd { k_dual: usize },
    /// Splitting-ADMM equivalents `τ = 1/J`, `ν = 1 − 1/J`; requires `K = J`.
    Sadmm,
    /// Proximal Jacobian: `τ = 1`, `ν = 0`, proximal weights derived from the
    /// block spectral bounds; requires `K = J`.
    Pjadmm,
    /// Caller-supplied values (validated unless `validate_steps` is off).
    Manual(StepSizes),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerScheme {
    /// Each iteration draws one of the C(J, K) subsets uniformly.
    UniformSubsets,
    /// A fixed random permutation is chunked into groups of K and visited
    /// round-robin.
    CyclicPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// `‖x − x_old‖/‖x_old‖ + ‖y − y_old‖/‖y_old‖ ≤ tol`, denominators
    /// floored at 1e-30.
    XyChange { tol: f64 },
    /// `‖Ax − a‖ ≤ tol`.
    PrimalResidual { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rho: f64,
    /// Primal blocks updated per iteration.
    pub k_primal: usize,
    pub step_rule: StepRule,
    pub update: UpdateRule,
    pub sampler: SamplerScheme,
    pub seed: u64,
    pub stop: StopRule,
    pub max_iter: usize,
    /// Track the Lyapunov distance each iteration (needs a KKT reference and
    /// retains the previous dual iterate).
    pub track_h: bool,
    /// Track the optimality residual each iteration.
    pub track_r: bool,
    /// Recompute `r = Ax − a` (and the block products) from scratch every
    /// this many iterations to cap incremental drift.
    pub r_refresh: usize,
    pub divergence_limit: f64,
    /// Check the step sizes against the certification constants before
    /// solving. Disable only to experiment with uncertified steps.
    pub validate_steps: bool,
    /// Worker threads for block updates. `None` reads `PDMM_THREADS`, else 1.
    pub threads: Option<usize>,
    /// Warm start `(x, y)`; the backward iterate is initialized consistently
    /// as `ŷ = y − ν∘ρr`. Default start is all zeros with `ŷ = 0`.
    pub init: Option<(BlockVector, BlockVector)>,
}

impl SolverConfig {
    /// Canonical configuration updating `k` random blocks per iteration.
    pub fn pdmm(k: usize) -> Self {
        Self {
            rho: 1.0,
            k_primal: k,
            step_rule: StepRule::Table1,
            update: UpdateRule::exact(),
            sampler: SamplerScheme::UniformSubsets,
            seed: 0,
            stop: StopRule::XyChange { tol: 1e-4 },
            max_iter: 10_000,
            track_h: false,
            track_r: true,
            r_refresh: 100,
            divergence_limit: 1e12,
            validate_steps: true,
            threads: None,
            init: None,
        }
    }

    /// Splitting-ADMM preset: all blocks, `τ = 1/J`, `ν = 1 − 1/J`.
    pub fn sadmm(j_blocks: usize) -> Self {
        let mut cfg = Self::pdmm(j_blocks);
        cfg.step_rule = StepRule::Sadmm;
        cfg
    }

    /// Proximal-Jacobian preset: all blocks, full dual step, derived `η`.
    pub fn pjadmm(j_blocks: usize) -> Self {
        let mut cfg = Self::pdmm(j_blocks);
        cfg.step_rule = StepRule::Pjadmm;
        cfg
    }

    /// Randomized dual updates: `k` primal and `k_dual` dual blocks move.
    pub fn rdbcd(k: usize, k_dual: usize) -> Self {
        let mut cfg = Self::pdmm(k);
        cfg.step_rule = StepRule::Rdbcd { k_dual };
        cfg
    }
}

fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var("PDMM_THREADS").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

enum PlanKind {
    /// `A_jᵀA_j = c·I` and `f_j` has a prox: the update is a prox step.
    Prox { gram_scale: f64 },
    /// Quadratic `f_j`: cached factorization of `H + ρ·A_jᵀA_j + ηI`.
    QuadExact { chol: Cholesky<f64, Dyn> },
    /// Linearized penalty: prox step with weight `1/η`.
    LinPenalty,
    /// Linearized objective: cached factorization of `ρ·A_jᵀA_j + 2ηI`.
    LinF { chol: Cholesky<f64, Dyn> },
    /// Both linearized: explicit gradient step.
    LinBoth,
}

struct UpdatePlan {
    kind: PlanKind,
    eta: f64,
}

struct BlockUpdate {
    j: usize,
    new_x: DVector<f64>,
    /// Per-row products `A_ij·(new − old)`.
    dz: Vec<(usize, DVector<f64>)>,
    /// `η_j·B(new, old)`.
    eta_breg: f64,
    fval: f64,
}

/// Outcome of a full solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: BlockVector,
    pub y: BlockVector,
    pub trace: Trace,
    pub stop: StopReason,
    pub iterations: usize,
}

/// Driver holding the iterate state. Use [`Solver::solve`] for the stock
/// loop or call [`Solver::step`] directly to instrument each iteration.
pub struct Solver<'p> {
    problem: &'p Problem,
    cfg: SolverConfig,
    steps: StepSizes,
    eta: Vec<f64>,
    plans: Vec<UpdatePlan>,
    breg: BregmanKind,
    /// `β_i = K/(J·K̃_i)` for the residual diagnostic.
    beta_r: Vec<f64>,
    gamma: Vec<f64>,
    sampler: Sampler,
    rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,

    x: BlockVector,
    y: BlockVector,
    y_hat: BlockVector,
    y_prev: BlockVector,
    r: BlockVector,
    z: Option<ZVector>,
    obj_cache: Vec<f64>,
    t: usize,
    start: Instant,
    /// Blocks selected at least once; the change-based stopping rule stays
    /// inactive until every block has had a chance to move (a never-updated
    /// block contributes a spurious zero change).
    touched: Vec<bool>,
    all_touched: bool,

    q_form: Option<QuadForm>,
    z_star: Option<ZVector>,
    f_star: Option<f64>,
}

impl<'p> Solver<'p> {
    pub fn new(problem: &'p Problem, cfg: SolverConfig) -> Result<Self> {
        let a = problem.matrix();
        let j_blocks = a.num_col_blocks();
        let i_blocks = a.num_row_blocks();
        let degrees = a.degrees();
        if cfg.rho <= 0.0 {
            return Err(Error::Config("rho must be positive".into()));
        }
        if cfg.r_refresh == 0 {
            return Err(Error::Config("r_refresh must be at least 1".into()));
        }

        // Step sizes and proximal weights.
        let (steps, mut eta) = match &cfg.step_rule {
            StepRule::Table1 => (table1_step_sizes(j_blocks, cfg.k_primal, &degrees)?, None),
            StepRule::Rdbcd { k_dual } => {
                (rdbcd_step_sizes(j_blocks, i_blocks, cfg.k_primal, *k_dual, &degrees)?, None)
            }
            StepRule::Sadmm => {
                if cfg.k_primal != j_blocks {
                    return Err(Error::Config(
                        "the splitting-ADMM preset updates all blocks; set K = J".into(),
                    ));
                }
                (sadmm_step_sizes(j_blocks, i_blocks)?, None)
            }
            StepRule::Pjadmm => {
                if cfg.k_primal != j_blocks {
                    return Err(Error::Config(
                        "the proximal-Jacobian preset updates all blocks; set K = J".into(),
                    ));
                }
                let spectral = |i: usize, j: usize| a.block_spectral_bound(i, j);
                let cols: Vec<Vec<usize>> =
                    (0..j_blocks).map(|j| a.col_neighbors(j).to_vec()).collect();
                let alpha = vec![1.0; j_blocks];
                let (s, derived) =
                    pjadmm_step_sizes(&degrees, cfg.rho, &spectral, &alpha, &cols)?;
                (s, Some(derived))
            }
            StepRule::Manual(s) => {
                if s.tau.len() != i_blocks || s.nu.len() != i_blocks {
                    return Err(Error::Config(
                        "manual step sizes must have one entry per constraint row".into(),
                    ));
                }
                (s.clone(), None)
            }
        };

        // η resolution: explicit > preset-derived > mode default.
        if let Some(user) = &cfg.update.eta {
            if user.len() != j_blocks {
                return Err(Error::Config(
                    "eta must have one entry per variable block".into(),
                ));
            }
            eta = Some(user.clone());
        }
        let eta = eta.unwrap_or_else(|| match cfg.update.mode {
            UpdateMode::Exact => vec![0.0; j_blocks],
            _ => (0..j_blocks).map(|j| cfg.rho * a.column_spectral_bound(j)).collect(),
        });
        if eta.iter().any(|&e| e < 0.0) {
            return Err(Error::Config("eta must be nonnegative".into()));
        }

        // Certify the steps unless the proximal-Jacobian coupling (which has
        // its own sufficient condition, enforced below) is in charge.
        if cfg.validate_steps {
            match &cfg.step_rule {
                StepRule::Pjadmm => {
                    for (j, &e) in eta.iter().enumerate() {
                        for &i in a.col_neighbors(j) {
                            let lam = a.block_spectral_bound(i, j).unwrap_or(0.0);
                            let need =
                                (degrees[i] - 1) as f64 * cfg.rho * i_blocks as f64 * lam;
                            if e + 1e-12 < need {
                                return Err(Error::Config(format!(
                                    "eta[{j}] = {e} below the proximal-Jacobian requirement {need}"
                                )));
                            }
                        }
                    }
                }
                _ => {
                    let report = validity_check(&steps, j_blocks, &degrees);
                    if !report.is_valid() {
                        let msgs: Vec<String> =
                            report.violations.iter().map(|v| v.to_string()).collect();
                        return Err(Error::Config(format!(
                            "step sizes fail certification ({}); override with \
                             validate_steps = false to experiment",
                            msgs.join("; ")
                        )));
                    }
                }
            }
        }

        let breg = match cfg.update.mode {
            UpdateMode::LinearizedF => BregmanKind::Squared,
            _ => BregmanKind::HalfSquared,
        };

        // Per-block solve plans.
        let mut plans = Vec::with_capacity(j_blocks);
        for j in 0..j_blocks {
            let f = &problem.funcs()[j];
            let kind = match cfg.update.mode {
                UpdateMode::Exact => {
                    if let Some(c) = a.col_gram_scale(j) {
                        if c == 0.0 && eta[j] == 0.0 {
                            return Err(Error::Config(format!(
                                "block {j} is unconstrained with no proximal weight; \
                                 set eta[{j}] > 0"
                            )));
                        }
                        if f.prox(&DVector::zeros(a.partition().col_size(j)), 1.0).is_some() {
                            PlanKind::Prox { gram_scale: c }
                        } else if f.quadratic().is_some() {
                            let chol = exact_quadratic_factor(a, j, f, cfg.rho, eta[j])?;
                            PlanKind::QuadExact { chol }
                        } else {
                            return Err(Error::Config(format!(
                                "no exact solver for block {j}; use a linearized update mode"
                            )));
                        }
                    } else if f.quadratic().is_some() {
                        let chol = exact_quadratic_factor(a, j, f, cfg.rho, eta[j])?;
                        PlanKind::QuadExact { chol }
                    } else {
                        return Err(Error::Config(format!(
                            "no exact solver for block {j} (non-orthogonal column and no \
                             quadratic form); use a linearized update mode"
                        )));
                    }
                }
                UpdateMode::LinearizedPenalty => {
                    let bound = cfg.rho * a.column_spectral_bound(j);
                    if eta[j] + 1e-12 < bound {
                        return Err(Error::Config(format!(
                            "eta[{j}] = {} below the linearized-penalty requirement {bound}",
                            eta[j]
                        )));
                    }
                    if f.prox(&DVector::zeros(a.partition().col_size(j)), 1.0).is_none() {
                        return Err(Error::Config(format!(
                            "block {j} exposes no prox; the linearized-penalty mode needs one"
                        )));
                    }
                    PlanKind::LinPenalty
                }
                UpdateMode::LinearizedF => {
                    if eta[j] <= 0.0 {
                        return Err(Error::Config(format!(
                            "eta[{j}] must be positive in linearized-objective mode"
                        )));
                    }
                    require_subgradient(f.as_ref(), a.partition().col_size(j), j)?;
                    let n = a.partition().col_size(j);
                    let mut sys = a.col_gram_dense(j) * cfg.rho;
                    for k in 0..n {
                        sys[(k, k)] += 2.0 * eta[j];
                    }
                    let chol = Cholesky::new(sys).ok_or_else(|| {
                        Error::Numerical(format!("block {j} linearized system not PD"))
                    })?;
                    PlanKind::LinF { chol }
                }
                UpdateMode::LinearizedBoth => {
                    if eta[j] <= 0.0 {
                        return Err(Error::Config(format!(
                            "eta[{j}] must be positive in fully linearized mode"
                        )));
                    }
                    require_subgradient(f.as_ref(), a.partition().col_size(j), j)?;
                    PlanKind::LinBoth
                }
            };
            plans.push(UpdatePlan { kind, eta: eta[j] });
        }

        let jf = j_blocks as f64;
        let beta_r: Vec<f64> =
            steps.k_tilde.iter().map(|&kt| steps.k_primal as f64 / (jf * kt as f64)).collect();
        let gamma: Vec<f64> = validity_check(&steps, j_blocks, &degrees)
            .constants
            .iter()
            .map(|c| c.gamma)
            .collect();

        let mut rng = seeded_rng(&[cfg.seed, 0x70_64_6d_6d]);
        let sampler = Sampler::new(cfg.sampler, j_blocks, cfg.k_primal, &mut rng)?;

        // Iterate state.
        let col_sizes = a.partition().col_sizes().to_vec();
        let row_sizes = a.partition().row_sizes().to_vec();
        let (x, y, y_hat) = match &cfg.init {
            None => {
                let x = BlockVector::zeros(col_sizes);
                let y = BlockVector::zeros(row_sizes.clone());
                let y_hat = BlockVector::zeros(row_sizes);
                (x, y, y_hat)
            }
            Some((x0, y0)) => {
                if x0.sizes() != a.partition().col_sizes()
                    || y0.sizes() != a.partition().row_sizes()
                {
                    return Err(Error::Dimension("warm start does not match partitions".into()));
                }
                let r0 = a.apply(x0)?.sub(&problem.rhs);
                let mut y_hat = y0.clone();
                for i in 0..i_blocks {
                    let adj = r0.block_owned(i) * (steps.nu[i] * cfg.rho);
                    y_hat.axpy_block(i, -1.0, &adj);
                }
                (x0.clone(), y0.clone(), y_hat)
            }
        };
        let r = a.apply(&x)?.sub(&problem.rhs);
        // Previous dual iterate consistent with the ascent recursion
        // y = y_prev + τ∘ρ·r, so the Lyapunov dual term telescopes from the
        // very first step.
        let mut y_prev = y.clone();
        for i in 0..i_blocks {
            let back = r.block_owned(i) * (steps.tau[i] * cfg.rho);
            y_prev.axpy_block(i, -1.0, &back);
        }

        let track_h = cfg.track_h;
        if track_h && problem.kkt().is_none() {
            return Err(Error::Config(
                "Lyapunov tracking needs a KKT reference on the problem".into(),
            ));
        }
        let z = if track_h { Some(ZVector::from_product(a, &x)?) } else { None };
        let (q_form, z_star, f_star) = if track_h {
            let kkt = problem.kkt().unwrap();
            (
                Some(build_q(a)),
                Some(ZVector::from_product(a, &kkt.x)?),
                Some(problem.objective(&kkt.x)),
            )
        } else {
            (None, None, None)
        };

        let obj_cache: Vec<f64> = problem
            .funcs()
            .iter()
            .enumerate()
            .map(|(j, f)| f.eval(&x.block_owned(j)))
            .collect();

        let threads = resolve_threads(cfg.threads);
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Self {
            problem,
            cfg,
            steps,
            eta,
            plans,
            breg,
            beta_r,
            gamma,
            sampler,
            rng,
            pool,
            x,
            y,
            y_hat,
            y_prev,
            r,
            z,
            obj_cache,
            t: 0,
            start: Instant::now(),
            touched: vec![false; j_blocks],
            all_touched: false,
            q_form,
            z_star,
            f_star,
        })
    }

    pub fn x(&self) -> &BlockVector {
        &self.x
    }

    pub fn y(&self) -> &BlockVector {
        &self.y
    }

    pub fn y_hat(&self) -> &BlockVector {
        &self.y_hat
    }

    pub fn residual(&self) -> &BlockVector {
        &self.r
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn objective(&self) -> f64 {
        self.obj_cache.iter().sum()
    }

    pub fn step_sizes(&self) -> &StepSizes {
        &self.steps
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Lyapunov distance of the current state (tracking must be enabled).
    pub fn current_h(&self) -> Option<f64> {
        if self.cfg.track_h {
            Some(self.compute_h())
        } else {
            None
        }
    }

    /// One iteration; returns its trace record.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let selection = self.sampler.next(&mut self.rng);
        self.step_with_selection(selection)
    }

    /// One iteration on an explicit selection. The selection is sorted
    /// internally, so permuting it cannot change the result.
    pub fn step_with_selection(&mut self, mut selection: Vec<usize>) -> Result<TraceRecord> {
        selection.sort_unstable();
        selection.dedup();
        self.t += 1;
        if !self.all_touched {
            for &j in &selection {
                self.touched[j] = true;
            }
            self.all_touched = self.touched.iter().all(|&t| t);
        }
        let a = self.problem.matrix();
        let i_blocks = a.num_row_blocks();

        let dual_selected: Vec<usize> = if self.steps.k_dual < i_blocks {
            sample_dual_rows(&mut self.rng, i_blocks, self.steps.k_dual)
        } else {
            (0..i_blocks).collect()
        };

        // Shared snapshot term ŷ + ρr read by every selected block.
        let mut w = self.y_hat.clone();
        w.axpy(self.cfg.rho, &self.r);

        let updates: Result<Vec<BlockUpdate>> = match &self.pool {
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                selection
                    .par_iter()
                    .map(|&j| self.update_block(j, &w))
                    .collect::<Result<Vec<_>>>()
            }),
            None => selection.iter().map(|&j| self.update_block(j, &w)).collect(),
        };
        let updates = updates?;

        // Fold phase: ascending block order (selection is sorted), single
        // writer.
        let mut eta_breg_sum = 0.0;
        let mut dz_rows: Vec<Vec<DVector<f64>>> = vec![Vec::new(); i_blocks];
        for u in updates {
            self.x.set_block(u.j, &u.new_x);
            self.obj_cache[u.j] = u.fval;
            for (i, dz) in u.dz {
                self.r.axpy_block(i, 1.0, &dz);
                if let Some(z) = &mut self.z {
                    z.add_entry(i, u.j, &dz);
                }
                if self.cfg.track_r {
                    dz_rows[i].push(dz);
                }
            }
            eta_breg_sum += u.eta_breg;
        }

        if self.t % self.cfg.r_refresh == 0 {
            self.r = a.apply(&self.x)?.sub(self.problem.rhs());
            if let Some(z) = &mut self.z {
                *z = ZVector::from_product(a, &self.x)?;
            }
        }

        let r_value = if self.cfg.track_r {
            let mut pt_term = 0.0;
            for (i, dzs) in dz_rows.iter().enumerate() {
                pt_term += pt_row_value(dzs, self.steps.k_tilde[i]);
            }
            let mut feas = 0.0;
            for i in 0..i_blocks {
                feas += self.beta_r[i] * self.r.block_owned(i).norm_squared();
            }
            Some(0.5 * self.cfg.rho * (pt_term + feas) + eta_breg_sum)
        } else {
            None
        };

        // Dual ascent on the selected rows, then the backward step on every
        // row so the next primal snapshot sees the latest residual.
        if self.cfg.track_h {
            self.y_prev = self.y.clone();
        }
        for &i in &dual_selected {
            let step = self.r.block_owned(i) * (self.steps.tau[i] * self.cfg.rho);
            self.y.axpy_block(i, 1.0, &step);
        }
        for i in 0..i_blocks {
            let y_i = self.y.block_owned(i);
            let back = self.r.block_owned(i) * (self.steps.nu[i] * self.cfg.rho);
            self.y_hat.set_block(i, &(y_i - back));
        }

        let h_value = if self.cfg.track_h { Some(self.compute_h()) } else { None };

        Ok(TraceRecord {
            t: self.t,
            objective: self.objective(),
            primal_residual: self.r.norm(),
            r_value,
            h_value,
            wall_time: self.start.elapsed().as_secs_f64(),
            selected_blocks: selection,
        })
    }

    fn update_block(&self, j: usize, w: &BlockVector) -> Result<BlockUpdate> {
        let a = self.problem.matrix();
        let f = &self.problem.funcs()[j];
        let plan = &self.plans[j];
        let x_j = self.x.block_owned(j);
        let g_lin = a.col_block_apply_transpose(w, j)?;

        let new_x = match &plan.kind {
            PlanKind::Prox { gram_scale } => {
                let weight = self.cfg.rho * gram_scale + plan.eta;
                let point = &x_j - &g_lin / weight;
                f.prox(&point, 1.0 / weight).ok_or_else(|| {
                    Error::Numerical(format!("prox evaluation failed for block {j}"))
                })?
            }
            PlanKind::QuadExact { chol } => {
                let (_, g) = f.quadratic().expect("plan requires quadratic data");
                let mut rhs = a.col_gram_apply(&x_j, j) * self.cfg.rho;
                rhs.axpy(plan.eta, &x_j, 1.0);
                rhs -= g;
                rhs -= &g_lin;
                chol.solve(&rhs)
            }
            PlanKind::LinPenalty => {
                let point = &x_j - &g_lin / plan.eta;
                f.prox(&point, 1.0 / plan.eta).ok_or_else(|| {
                    Error::Numerical(format!("prox evaluation failed for block {j}"))
                })?
            }
            PlanKind::LinF { chol } => {
                let grad = f.subgradient(&x_j).expect("plan requires a subgradient");
                let mut rhs = a.col_gram_apply(&x_j, j) * self.cfg.rho;
                rhs.axpy(2.0 * plan.eta, &x_j, 1.0);
                rhs -= &grad;
                rhs -= &g_lin;
                chol.solve(&rhs)
            }
            PlanKind::LinBoth => {
                let grad = f.subgradient(&x_j).expect("plan requires a subgradient");
                &x_j - (grad + &g_lin) / plan.eta
            }
        };

        let delta = &new_x - &x_j;
        let dz = a.col_block_apply(&delta, j);
        let eta_breg =
            if plan.eta != 0.0 { plan.eta * self.breg.eval(&new_x, &x_j) } else { 0.0 };
        let fval = f.eval(&new_x);
        Ok(BlockUpdate { j, new_x, dz, eta_breg, fval })
    }

    fn compute_h(&self) -> f64 {
        let kkt = self.problem.kkt().expect("tracking requires a reference");
        let i_blocks = self.problem.num_dual_blocks();
        let dual_weight = self.steps.k_primal as f64 / self.problem.num_primal_blocks() as f64
            * (i_blocks as f64 / self.steps.k_dual as f64);
        let degrees = self.problem.matrix().degrees();
        let ctx = HContext {
            rhs: self.problem.rhs(),
            rho: self.cfg.rho,
            tau: &self.steps.tau,
            gamma: &self.gamma,
            dual_weight,
            q: self.q_form.as_ref().unwrap(),
            degrees: &degrees,
            x_star: &kkt.x,
            y_star: &kkt.y,
            z_star: self.z_star.as_ref().unwrap(),
            f_star: self.f_star.unwrap(),
            eta: &self.eta,
            breg: self.breg,
        };
        crate::diagnostics::lyapunov_h(
            &ctx,
            &self.x,
            &self.y,
            &self.y_prev,
            self.z.as_ref().unwrap(),
            self.objective(),
        )
    }

    /// Runs the configured loop to completion.
    pub fn solve(mut self) -> Result<SolveOutcome> {
        let mut trace = Trace::default();
        loop {
            let x_old = self.x.clone();
            let y_old = self.y.clone();
            let rec = self.step()?;

            let diverged = !rec.objective.is_finite()
                || !rec.primal_residual.is_finite()
                || rec.objective.abs() > self.cfg.divergence_limit
                || rec.primal_residual > self.cfg.divergence_limit;
            if diverged {
                let iteration = rec.t;
                trace.records.push(rec);
                return Err(Error::Divergence {
                    iteration,
                    message: "objective or constraint residual exceeded the divergence limit"
                        .into(),
                    trace,
                });
            }

            let stopped = match self.cfg.stop {
                StopRule::XyChange { tol } => {
                    let dx = self.x.sub(&x_old).norm() / x_old.norm().max(1e-30);
                    let dy = self.y.sub(&y_old).norm() / y_old.norm().max(1e-30);
                    self.all_touched && dx + dy <= tol
                }
                StopRule::PrimalResidual { tol } => rec.primal_residual <= tol,
            };
            trace.records.push(rec);

            if stopped {
                return Ok(SolveOutcome {
                    x: self.x,
                    y: self.y,
                    trace,
                    stop: StopReason::Tolerance,
                    iterations: self.t,
                });
            }
            if self.t >= self.cfg.max_iter {
                return Ok(SolveOutcome {
                    x: self.x,
                    y: self.y,
                    trace,
                    stop: StopReason::MaxIter,
                    iterations: self.t,
                });
            }
        }
    }
}

/// `Σ_j ‖dz_j‖² − (1/K̃)‖Σ_j dz_j‖²` for one row, arranged so roundoff keeps
/// it nonnegative.
fn pt_row_value(dzs: &[DVector<f64>], k_tilde: usize) -> f64 {
    if dzs.is_empty() {
        return 0.0;
    }
    let count = dzs.len() as f64;
    let mut sum = DVector::zeros(dzs[0].len());
    for d in dzs {
        sum += d;
    }
    let mean = &sum / count;
    let mut dev = 0.0;
    for d in dzs {
        dev += (d - &mean).norm_squared();
    }
    dev + (1.0 / count - 1.0 / k_tilde as f64) * sum.norm_squared()
}

fn exact_quadratic_factor(
    a: &BlockMatrix,
    j: usize,
    f: &Arc<dyn BlockFunction>,
    rho: f64,
    eta: f64,
) -> Result<Cholesky<f64, Dyn>> {
    let (h, _) = f.quadratic().expect("caller checked");
    let n = a.partition().col_size(j);
    let mut sys = a.col_gram_dense(j) * rho;
    sys += h;
    for k in 0..n {
        sys[(k, k)] += eta;
    }
    Cholesky::new(sys).ok_or_else(|| {
        Error::Numerical(format!("block {j} exact subproblem matrix is not positive definite"))
    })
}

fn require_subgradient(f: &dyn BlockFunction, dim: usize, j: usize) -> Result<()> {
    if f.subgradient(&DVector::zeros(dim)).is_none() {
        return Err(Error::Config(format!(
            "block {j} exposes no (sub)gradient; required by the linearized objective mode"
        )));
    }
    Ok(())
}

/// Convenience wrapper: build a [`Solver`] and run it.
pub fn solve(problem: &Problem, cfg: SolverConfig) -> Result<SolveOutcome> {
    Solver::new(problem, cfg)?.solve()
}

/// Gauss–Seidel reference: sweeps every block sequentially with fresh
/// residuals, then takes a full dual step. No convergence certificate; kept
/// as a comparison baseline for two- and three-block problems.
pub fn gsadmm_reference(
    problem: &Problem,
    rho: f64,
    stop: StopRule,
    max_iter: usize,
) -> Result<SolveOutcome> {
    let a = problem.matrix();
    let j_blocks = a.num_col_blocks();
    let i_blocks = a.num_row_blocks();
    let mut x = BlockVector::zeros(a.partition().col_sizes().to_vec());
    let mut y = BlockVector::zeros(a.partition().row_sizes().to_vec());
    let mut r = a.apply(&x)?.sub(problem.rhs());
    let start = Instant::now();
    let mut trace = Trace::default();

    for t in 1..=max_iter {
        let x_old = x.clone();
        let y_old = y.clone();
        for j in 0..j_blocks {
            let f = &problem.funcs()[j];
            let mut w = y.clone();
            w.axpy(rho, &r);
            let g_lin = a.col_block_apply_transpose(&w, j)?;
            let x_j = x.block_owned(j);
            let new_x = if let Some(c) = a.col_gram_scale(j) {
                if c == 0.0 {
                    return Err(Error::Config(format!("block {j} is unconstrained")));
                }
                let weight = rho * c;
                let point = &x_j - &g_lin / weight;
                f.prox(&point, 1.0 / weight).ok_or_else(|| {
                    Error::Config(format!("block {j} has no prox for the reference sweep"))
                })?
            } else if f.quadratic().is_some() {
                let chol = exact_quadratic_factor(a, j, f, rho, 0.0)?;
                let (_, g) = f.quadratic().unwrap();
                let mut rhs = a.col_gram_apply(&x_j, j) * rho;
                rhs -= g;
                rhs -= &g_lin;
                chol.solve(&rhs)
            } else {
                return Err(Error::Config(format!("no exact update for block {j}")));
            };
            let delta = &new_x - &x_j;
            for (i, dz) in a.col_block_apply(&delta, j) {
                r.axpy_block(i, 1.0, &dz);
            }
            x.set_block(j, &new_x);
        }
        for i in 0..i_blocks {
            let step = r.block_owned(i) * rho;
            y.axpy_block(i, 1.0, &step);
        }
        let objective = problem.objective(&x);
        let primal_residual = r.norm();
        trace.records.push(TraceRecord {
            t,
            objective,
            primal_residual,
            r_value: None,
            h_value: None,
            wall_time: start.elapsed().as_secs_f64(),
            selected_blocks: (0..j_blocks).collect(),
        });
        let stopped = match stop {
            StopRule::XyChange { tol } => {
                let dx = x.sub(&x_old).norm() / x_old.norm().max(1e-30);
                let dy = y.sub(&y_old).norm() / y_old.norm().max(1e-30);
                dx + dy <= tol
            }
            StopRule::PrimalResidual { tol } => primal_residual <= tol,
        };
        if stopped {
            return Ok(SolveOutcome { x, y, trace, stop: StopReason::Tolerance, iterations: t });
        }
    }
    let iterations = trace.records.len();
    Ok(SolveOutcome { x, y, trace, stop: StopReason::MaxIter, iterations })
}
