//! Independent reference implementations used as test oracles. Everything
//! here recomputes results from first principles; nothing reuses the solver's
//! update path.
#![allow(dead_code)] // each test target uses a different subset

use nalgebra::{DMatrix, DVector};
use pdmm::problems::GroupLassoInstance;
use pdmm::solver::Problem;

/// Two-block ADMM on the splitting reformulation: copies `z_j = A_j x_j`
/// with the coupling `Σ_j z_j = a` handled by the z-projection. The
/// per-block objectives must be `½‖x_j − c_j‖²`.
///
/// Iterates:
/// ```text
/// x_j ← argmin ½‖x_j − c_j‖² + ⟨y_j, A_j x_j⟩ + (ρ/2)‖A_j x_j − z_j‖²
/// z   ← argmin_{Σ z_j = a} Σ_j [ −⟨y_j, z_j⟩ + (ρ/2)‖A_j x_j − z_j‖² ]
/// y_j ← y_j + ρ(A_j x_j − z_j)
/// ```
///
/// The z-step has the closed form `z_j = A_j x_j + (y_j − λ)/ρ` with the
/// shared multiplier `λ = (ρ(Σ_j A_j x_j − a) + Σ_j y_j)/J`, which also makes
/// every `y_j` equal to `λ` after the dual step.
pub struct SplittingAdmm {
    pub cols: Vec<DMatrix<f64>>,
    pub centers: Vec<DVector<f64>>,
    pub rhs: DVector<f64>,
    pub rho: f64,
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    factors: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl SplittingAdmm {
    /// Starts from `x = 0`, `y_j = 0`, `z_j = a`, which corresponds to the
    /// solver's all-zero start (where the first implicit dual term is
    /// `ρ(A·0 − a)`).
    pub fn new(
        cols: Vec<DMatrix<f64>>,
        centers: Vec<DVector<f64>>,
        rhs: DVector<f64>,
        rho: f64,
    ) -> Self {
        let factors = cols
            .iter()
            .map(|a| {
                let n = a.ncols();
                let sys = DMatrix::identity(n, n) + a.transpose() * a * rho;
                sys.cholesky().expect("x-update system is positive definite")
            })
            .collect();
        let x = cols.iter().map(|a| DVector::zeros(a.ncols())).collect();
        let z = cols.iter().map(|_| rhs.clone()).collect();
        let y = cols.iter().map(|_| DVector::zeros(rhs.len())).collect();
        Self { cols, centers, rhs, rho, x, z, y, factors }
    }

    pub fn step(&mut self) {
        let j_blocks = self.cols.len();
        for j in 0..j_blocks {
            let rhs = &self.centers[j]
                + self.cols[j].transpose() * (&self.z[j] * self.rho - &self.y[j]);
            self.x[j] = self.factors[j].solve(&rhs);
        }
        let mut ax_sum = DVector::zeros(self.rhs.len());
        let mut y_sum = DVector::zeros(self.rhs.len());
        let ax: Vec<DVector<f64>> =
            (0..j_blocks).map(|j| &self.cols[j] * &self.x[j]).collect();
        for j in 0..j_blocks {
            ax_sum += &ax[j];
            y_sum += &self.y[j];
        }
        let lambda = ((&ax_sum - &self.rhs) * self.rho + y_sum) / j_blocks as f64;
        for j in 0..j_blocks {
            self.z[j] = &ax[j] + (&self.y[j] - &lambda) / self.rho;
            self.y[j] = &self.y[j] + (&ax[j] - &self.z[j]) * self.rho;
        }
    }

    /// Concatenated primal iterate for comparison against the solver.
    pub fn x_concat(&self) -> DVector<f64> {
        let total: usize = self.x.iter().map(DVector::len).sum();
        let mut out = DVector::zeros(total);
        let mut off = 0;
        for xj in &self.x {
            out.rows_mut(off, xj.len()).copy_from(xj);
            off += xj.len();
        }
        out
    }
}

/// Extracts the dense column blocks and quadratic centers of a problem whose
/// blocks are `½‖x_j − c_j‖²`, for feeding the oracle.
pub fn quadratic_problem_data(
    problem: &Problem,
) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>, DVector<f64>) {
    let a = problem.matrix();
    let dense = a.to_dense();
    let mut cols = Vec::new();
    let mut centers = Vec::new();
    let mut off = 0;
    for j in 0..problem.num_primal_blocks() {
        let n_j = a.partition().col_size(j);
        cols.push(dense.columns(off, n_j).into_owned());
        // ∇f_j(0) = −c_j.
        let g0 = problem.funcs()[j].subgradient(&DVector::zeros(n_j)).unwrap();
        centers.push(-g0);
        off += n_j;
    }
    (cols, centers, problem.rhs().data().clone())
}

/// Exact prox of `w ↦ Σ_g radius_g·‖w_g‖` with overlapping groups, computed
/// by cyclic projections on the dual: `u = v − Σ_g U_g ξ_g` with each
/// `‖ξ_g‖ ≤ radius_g`, and per-group updates
/// `ξ_g ← Π_{radius_g}(ξ_g + U_gᵀ res)`.
pub struct OverlapProx {
    groups: Vec<Vec<usize>>,
    xi: Vec<DVector<f64>>,
}

impl OverlapProx {
    pub fn new(groups: Vec<Vec<usize>>) -> Self {
        let xi = groups.iter().map(|g| DVector::zeros(g.len())).collect();
        Self { groups, xi }
    }

    pub fn eval(&mut self, v: &DVector<f64>, radii: &[f64], tol: f64) -> DVector<f64> {
        let mut res = v.clone();
        for (g, idx) in self.groups.iter().enumerate() {
            for (t, &k) in idx.iter().enumerate() {
                res[k] -= self.xi[g][t];
            }
        }
        let scale = 1.0 + v.norm();
        for _sweep in 0..5000 {
            let mut max_delta = 0.0f64;
            for (g, idx) in self.groups.iter().enumerate() {
                let mut cand = DVector::zeros(idx.len());
                for (t, &k) in idx.iter().enumerate() {
                    cand[t] = res[k] + self.xi[g][t];
                }
                let n = cand.norm();
                if n > radii[g] {
                    cand *= radii[g] / n;
                }
                for (t, &k) in idx.iter().enumerate() {
                    let delta = cand[t] - self.xi[g][t];
                    res[k] -= delta;
                    max_delta = max_delta.max(delta.abs());
                }
                self.xi[g] = cand;
            }
            if max_delta <= tol * scale {
                break;
            }
        }
        res
    }
}

/// High-precision proximal-gradient (accelerated, with function restart) for
/// the overlapping group lasso. Returns the final point and objective.
pub fn fista_group_lasso(
    inst: &GroupLassoInstance,
    max_iter: usize,
    tol: f64,
) -> (DVector<f64>, f64) {
    let n = inst.design.ncols();
    let l_groups = inst.groups.len() as f64;
    let loss_scale = 1.0 / (l_groups * inst.lambda);
    let sigma_max = inst.design.singular_values()[0];
    let lipschitz = loss_scale * sigma_max * sigma_max;
    let step = 1.0 / lipschitz;
    let radii: Vec<f64> = inst.weights.iter().map(|d| d * step).collect();

    let objective = |w: &DVector<f64>| pdmm::problems::group_lasso_objective(inst, w);
    let grad = |w: &DVector<f64>| {
        inst.design.transpose() * (&inst.design * w - &inst.response) * loss_scale
    };

    let mut prox = OverlapProx::new(inst.groups.clone());
    let mut w = DVector::zeros(n);
    let mut w_prev = w.clone();
    let mut momentum = 1.0f64;
    let mut best = w.clone();
    let mut f_best = objective(&w);
    let mut stall = 0usize;
    for _it in 0..max_iter {
        let accel = (momentum - 1.0) / {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            momentum = next;
            next
        };
        let y = &w + (&w - &w_prev) * accel;
        let candidate = &y - grad(&y) * step;
        let w_next = prox.eval(&candidate, &radii, 1e-15);
        let f_next = objective(&w_next);
        if f_next > f_best {
            // Function restart: drop the momentum.
            momentum = 1.0;
        }
        w_prev = std::mem::replace(&mut w, w_next);
        // Stop once no improvement beyond the tolerance shows up for a
        // sustained stretch.
        if f_best - f_next > tol * (1.0 + f_best.abs()) {
            stall = 0;
        } else {
            stall += 1;
        }
        if f_next < f_best {
            f_best = f_next;
            best = w.clone();
        }
        if stall >= 200 {
            break;
        }
    }
    (best, f_best)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
