//! Convergence diagnostics: per-iteration trace records, the optimality
//! residual, and the Lyapunov distance to a KKT point.

use nalgebra::DVector;

use crate::block::{BlockMatrix, BlockVector, ZVector};
use crate::quadform::{build_pt, QuadForm};
use crate::{Error, Result};

/// How the solver's Bregman term measures block movement, fixed by the
/// update mode: `½‖u − v‖²` for the Euclidean generator, `‖u − v‖²` when the
/// objective is linearized with an un-halved proximal term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BregmanKind {
    HalfSquared,
    Squared,
}

impl BregmanKind {
    pub fn eval(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let d = (u - v).norm_squared();
        match self {
            BregmanKind::HalfSquared => 0.5 * d,
            BregmanKind::Squared => d,
        }
    }
}

/// One iteration of a solve.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub r_value: Option<f64>,
    pub h_value: Option<f64>,
    /// Seconds since the solve started.
    pub wall_time: f64,
    pub selected_blocks: Vec<usize>,
}

/// Full per-iteration history of a solve.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Residual of the optimality conditions after one iteration:
///
/// ```text
/// R = (ρ/2)‖z_new − z_old‖²_{P_t} + (ρ/2) Σ_i β_i ‖A_i x_new − a_i‖²
///     + Σ_j η_j B(x_new_j, x_old_j)
/// ```
///
/// with `β_i = K/(JK̃_i)`. Vanishes exactly when the iterate is feasible and
/// no selected block moved.
#[allow(clippy::too_many_arguments)]
pub fn residual_r(
    a: &BlockMatrix,
    rhs: &BlockVector,
    x_new: &BlockVector,
    x_old: &BlockVector,
    selected: &[usize],
    k_primal: usize,
    rho: f64,
    eta: &[f64],
    breg: BregmanKind,
) -> Result<f64> {
    let pt = build_pt(a, selected, k_primal)?;
    let z_new = ZVector::from_product(a, x_new)?;
    let z_old = ZVector::from_product(a, x_old)?;
    let pt_term = pt.dist_sq(&z_new, &z_old);

    let j_blocks = a.num_col_blocks() as f64;
    let mut feas = 0.0;
    for i in 0..a.num_row_blocks() {
        let k_tilde = k_primal.min(a.row_neighbors(i).len()).max(1);
        let beta = k_primal as f64 / (j_blocks * k_tilde as f64);
        let resid = a.row_block_apply(x_new, i)? - rhs.block_owned(i);
        feas += beta * resid.norm_squared();
    }

    let mut breg_term = 0.0;
    for &j in selected {
        if eta[j] != 0.0 {
            breg_term += eta[j] * breg.eval(&x_new.block_owned(j), &x_old.block_owned(j));
        }
    }
    Ok(0.5 * rho * pt_term + 0.5 * rho * feas + breg_term)
}

/// Everything the Lyapunov distance needs besides the moving iterate.
pub struct HContext<'a> {
    pub rhs: &'a BlockVector,
    pub rho: f64,
    pub tau: &'a [f64],
    pub gamma: &'a [f64],
    /// `(K/J)·(I/K_I)`: scales the dual-distance term; `K/J` when every dual
    /// block is updated each iteration.
    pub dual_weight: f64,
    pub q: &'a QuadForm,
    pub degrees: &'a [usize],
    pub x_star: &'a BlockVector,
    pub y_star: &'a BlockVector,
    pub z_star: &'a ZVector,
    pub f_star: f64,
    pub eta: &'a [f64],
    pub breg: BregmanKind,
}

/// Signed auxiliary Lagrangian
///
/// ```text
/// L̃(x, y) = f(x) − f(x*) + Σ_i { ⟨y_i, A_i x − a_i⟩
///           + ((γ_i − τ_i)ρ/2)‖A_i x − a_i‖² }
/// ```
///
/// The row residuals are taken from the row sums of `z` so the value cannot
/// drift away from the iterate it describes.
pub fn aux_lagrangian(ctx: &HContext<'_>, y: &BlockVector, z: &ZVector, f_x: f64) -> f64 {
    let mut acc = f_x - ctx.f_star;
    for i in 0..ctx.rhs.num_blocks() {
        let resid = z.row_sum(i) - ctx.rhs.block_owned(i);
        acc += y.block_owned(i).dot(&resid)
            + 0.5 * (ctx.gamma[i] - ctx.tau[i]) * ctx.rho * resid.norm_squared();
    }
    acc
}

/// Distance from the current iterate to the KKT reference:
///
/// ```text
/// h = w Σ_i (1/2τ_iρ)‖y_i* − y_i_prev‖² + L̃(x, y)
///     + (ρ/2)‖z* − z‖²_Q + Σ_j η_j B(x_j*, x_j)
/// ```
///
/// Nonnegative under the canonical step sizes; a materially negative value
/// indicates an invalid configuration or a stale reference, so it panics.
pub fn lyapunov_h(
    ctx: &HContext<'_>,
    x: &BlockVector,
    y: &BlockVector,
    y_prev: &BlockVector,
    z: &ZVector,
    f_x: f64,
) -> f64 {
    let mut dual = 0.0;
    for i in 0..y.num_blocks() {
        let d = (ctx.y_star.block_owned(i) - y_prev.block_owned(i)).norm_squared();
        dual += d / (2.0 * ctx.tau[i] * ctx.rho);
    }
    let q_term = 0.5 * ctx.rho * ctx.q.dist_sq(ctx.z_star, z);

    #[cfg(debug_assertions)]
    {
        // Cross-check the structural form against its expanded identity
        // ‖z − z*‖²_Q = Σ_i [ ‖z_i − z_i*‖² − (1/d_i)‖A_i x − a_i‖² ],
        // valid whenever the reference is feasible.
        let mut expanded = 0.0;
        for i in 0..ctx.rhs.num_blocks() {
            let mut sq = 0.0;
            for (&(bi, bj), v) in z.iter() {
                if bi == i {
                    sq += (v - ctx.z_star.entry(bi, bj).expect("pattern mismatch"))
                        .norm_squared();
                }
            }
            let resid = z.row_sum(i) - ctx.rhs.block_owned(i);
            expanded += sq - resid.norm_squared() / ctx.degrees[i] as f64;
        }
        let direct = ctx.q.dist_sq(ctx.z_star, z);
        let scale = direct.abs().max(expanded.abs()).max(1.0);
        debug_assert!(
            (direct - expanded).abs() <= 1e-10 * scale,
            "structural norm disagrees with its expansion: {direct} vs {expanded}"
        );
    }

    let mut breg_term = 0.0;
    for j in 0..x.num_blocks() {
        if ctx.eta[j] != 0.0 {
            breg_term +=
                ctx.eta[j] * ctx.breg.eval(&ctx.x_star.block_owned(j), &x.block_owned(j));
        }
    }

    let h = ctx.dual_weight * dual + aux_lagrangian(ctx, y, z, f_x) + q_term + breg_term;
    assert!(
        h >= -1e-9,
        "Lyapunov distance {h} is negative; step sizes or KKT reference are inconsistent"
    );
    h
}

/// Validates a KKT reference against the constraint: `‖Ax* − a‖ ≤ 1e-8(1 + ‖a‖)`.
pub fn check_reference_feasible(
    a: &BlockMatrix,
    rhs: &BlockVector,
    x_star: &BlockVector,
) -> Result<()> {
    let resid = a.apply(x_star)?.sub(rhs).norm();
    let bound = 1e-8 * (1.0 + rhs.norm());
    if resid > bound {
        return Err(Error::Validation(format!(
            "reference point violates the constraint: ‖Ax − a‖ = {resid:e} > {bound:e}"
        )));
    }
    Ok(())
}

/// Running mean of primal iterates, `x̄_T = (1/T) Σ_{t=1..T} x_t`.
#[derive(Debug, Clone)]
pub struct ErgodicAverage {
    mean: BlockVector,
    count: usize,
}

impl ErgodicAverage {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { mean: BlockVector::zeros(sizes), count: 0 }
    }

    pub fn push(&mut self, x: &BlockVector) {
        self.count += 1;
        let delta = x.sub(&self.mean).scale(1.0 / self.count as f64);
        self.mean.axpy(1.0, &delta);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &BlockVector {
        &self.mean
    }
}
