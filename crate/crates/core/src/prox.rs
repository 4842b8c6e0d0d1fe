//! Proximal operators and the block-function interface.
//!
//! `prox_f(v, λ) = argmin_u f(u) + (1/2λ)‖u − v‖²` throughout. Matrix-valued
//! blocks travel through the solver as vectorized segments; the functions
//! that need the matrix shape carry it themselves.

use std::collections::HashMap;
use std::sync::RwLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Componentwise soft threshold `sign(v_k)·max(|v_k| − λ, 0)`.
pub fn prox_l1(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    assert!(lambda > 0.0, "threshold must be positive");
    v.map(|t| t.signum() * (t.abs() - lambda).max(0.0))
}

/// Block shrinkage `max(1 − λ/‖v‖, 0)·v`; returns 0 at v = 0.
pub fn prox_group_l2(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    assert!(lambda > 0.0, "threshold must be positive");
    let n = v.norm();
    if n <= lambda {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - lambda / n)
    }
}

/// Singular value thresholding: `U·shrink(Σ, λ)·Wᵀ` from the SVD `V = UΣWᵀ`.
pub fn prox_nuclear(v: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    assert!(lambda > 0.0, "threshold must be positive");
    let svd = nalgebra::linalg::SVD::try_new(v.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "SVD did not converge on a {}×{} matrix during singular value thresholding",
                v.nrows(),
                v.ncols()
            ))
        })?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let shrunk = svd.singular_values.map(|s| (s - lambda).max(0.0));
    let mut scaled = u.clone();
    for (c, s) in shrunk.iter().enumerate() {
        scaled.column_mut(c).scale_mut(*s);
    }
    Ok(scaled * v_t)
}

/// Prox of `f = (c/2)‖·‖²_F`, i.e. `V / (1 + cλ)`.
pub fn prox_sq_frobenius(v: &DMatrix<f64>, lambda: f64, c: f64) -> DMatrix<f64> {
    assert!(lambda > 0.0 && c > 0.0);
    v / (1.0 + c * lambda)
}

/// Solves `(H + μI) u = μ v − g` for the prox of `f(u) = ½uᵀHu + gᵀu` with
/// weight `μ = 1/λ`.
pub fn quadratic_loss_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    mu: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    assert!(mu > 0.0, "prox weight must be positive");
    let n = v.len();
    let mut sys = h.clone();
    for k in 0..n {
        sys[(k, k)] += mu;
    }
    let chol = Cholesky::new(sys).ok_or_else(|| {
        Error::Numerical("quadratic subproblem matrix is not positive definite".into())
    })?;
    Ok(chol.solve(&(v * mu - g)))
}

/// One separable objective term `f_j` as seen by the solver.
///
/// Implementations are immutable after construction; cached factorizations
/// use interior locking so concurrent prox calls stay safe.
pub trait BlockFunction: Send + Sync {
    fn eval(&self, x: &DVector<f64>) -> f64;

    /// `argmin_u f(u) + (1/2λ)‖u − v‖²`, or `None` when no closed form is
    /// available.
    fn prox(&self, _v: &DVector<f64>, _lambda: f64) -> Option<DVector<f64>> {
        None
    }

    /// A subgradient at `x` (the gradient where `f` is differentiable).
    fn subgradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// For `f(u) = ½uᵀHu + gᵀu`: the pair `(H, g)`. Lets the solver build an
    /// exact composite update via a cached factorization.
    fn quadratic(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }

    /// Projection onto the block's local constraint set; identity for an
    /// unconstrained block. Functions with a nontrivial set must honor it
    /// inside `prox` as well.
    fn project(&self, x: DVector<f64>) -> DVector<f64> {
        x
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Default)]
pub struct ZeroFn;

impl BlockFunction for ZeroFn {
    fn eval(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn prox(&self, v: &DVector<f64>, _lambda: f64) -> Option<DVector<f64>> {
        Some(v.clone())
    }
    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(x.len()))
    }
}

/// `f(x) = (c/2)‖x‖²` (vectorized Frobenius norm for matrix blocks).
#[derive(Debug, Clone)]
pub struct SqNorm {
    pub weight: f64,
}

impl BlockFunction for SqNorm {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.weight * x.norm_squared()
    }
    fn prox(&self, v: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        Some(v / (1.0 + self.weight * lambda))
    }
    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(x * self.weight)
    }
}

/// `f(x) = w‖x‖₁`.
#[derive(Debug, Clone)]
pub struct L1Norm {
    pub weight: f64,
}

impl BlockFunction for L1Norm {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.weight * x.iter().map(|t| t.abs()).sum::<f64>()
    }
    fn prox(&self, v: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        Some(prox_l1(v, self.weight * lambda))
    }
    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(x.map(|t| self.weight * t.signum()))
    }
}

/// `f(x) = w‖x‖₂` over the whole block.
#[derive(Debug, Clone)]
pub struct GroupL2Norm {
    pub weight: f64,
}

impl BlockFunction for GroupL2Norm {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.weight * x.norm()
    }
    fn prox(&self, v: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        Some(prox_group_l2(v, self.weight * lambda))
    }
}

/// `f(X) = w‖X‖_*` on a vectorized `nrows × ncols` block (column-major).
#[derive(Debug, Clone)]
pub struct NuclearNorm {
    pub weight: f64,
    pub nrows: usize,
    pub ncols: usize,
}

impl NuclearNorm {
    fn reshape(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.nrows, self.ncols, x.as_slice())
    }
}

impl BlockFunction for NuclearNorm {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        let m = self.reshape(x);
        self.weight * m.singular_values().iter().sum::<f64>()
    }
    fn prox(&self, v: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let m = self.reshape(v);
        let out = prox_nuclear(&m, self.weight * lambda).ok()?;
        Some(DVector::from_column_slice(out.as_slice()))
    }
}

/// `f(x) = ½xᵀHx + gᵀx + c₀` with prox factorizations cached per weight.
pub struct QuadraticFn {
    h: DMatrix<f64>,
    g: DVector<f64>,
    constant: f64,
    cache: RwLock<HashMap<u64, std::sync::Arc<Cholesky<f64, Dyn>>>>,
}

impl QuadraticFn {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        Self::with_constant(h, g, 0.0)
    }

    pub fn with_constant(h: DMatrix<f64>, g: DVector<f64>, constant: f64) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != g.len() {
            return Err(Error::Dimension("quadratic data shape mismatch".into()));
        }
        Ok(Self { h, g, constant, cache: RwLock::new(HashMap::new()) })
    }

    /// Least-squares loss `(scale/2)‖A x − b‖²`, constant term included so
    /// reported objectives match the un-expanded form.
    pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, scale: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension("design/response shape mismatch".into()));
        }
        let h = a.transpose() * a * scale;
        let g = -(a.transpose() * b) * scale;
        Self::with_constant(h, g, 0.5 * scale * b.norm_squared())
    }

    fn factor(&self, mu: f64) -> Result<std::sync::Arc<Cholesky<f64, Dyn>>> {
        let key = mu.to_bits();
        if let Some(f) = self.cache.read().unwrap().get(&key) {
            return Ok(f.clone());
        }
        let n = self.g.len();
        let mut sys = self.h.clone();
        for k in 0..n {
            sys[(k, k)] += mu;
        }
        let chol = Cholesky::new(sys).ok_or_else(|| {
            Error::Numerical("quadratic subproblem matrix is not positive definite".into())
        })?;
        let arc = std::sync::Arc::new(chol);
        self.cache.write().unwrap().insert(key, arc.clone());
        Ok(arc)
    }
}

impl std::fmt::Debug for QuadraticFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadraticFn").field("dim", &self.g.len()).finish()
    }
}

impl BlockFunction for QuadraticFn {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.h * x).dot(x) + self.g.dot(x) + self.constant
    }
    fn prox(&self, v: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let mu = 1.0 / lambda;
        let f = self.factor(mu).ok()?;
        Some(f.solve(&(v * mu - &self.g)))
    }
    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.h * x + &self.g)
    }
    fn quadratic(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.h, &self.g))
    }
}
