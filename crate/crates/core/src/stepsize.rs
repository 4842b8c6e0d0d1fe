//! Dual step sizes `(τ_i, ν_i)` and the constants that certify them.
//!
//! The canonical table, indexed by the number of primal blocks `K` updated
//! per iteration (out of `J`) and the row degrees `d_i`, with
//! `K̃_i = min(d_i, K)`:
//!
//! ```text
//! K = 1      ν_i = 0            τ_i = 1/(2J−1)
//! 1 < K < J  ν_i = 1 − 1/K̃_i   τ_i = K/(K̃_i(2J−K))
//! K = J      ν_i = 1 − 1/d_i    τ_i = 1/d_i
//! ```
//!
//! All three rows are instances of `ν = 1 − 1/K̃`, `τ = K/(K̃(2J−K))`. Every
//! value is produced by a single division of two exactly represented
//! integers, so callers comparing against hand-reduced fractions get
//! bit-exact results.

use crate::{Error, Result};

/// Per-row dual step sizes plus the block counts they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    /// Dual ascent step `τ_i > 0` per constraint row block.
    pub tau: Vec<f64>,
    /// Dual backward step `ν_i ∈ [0, 1)` per constraint row block.
    pub nu: Vec<f64>,
    /// Primal blocks updated per iteration (`K`).
    pub k_primal: usize,
    /// Dual blocks updated per iteration (`K_I`; equals the row count unless
    /// dual updates are also randomized).
    pub k_dual: usize,
    /// `K̃_i = min(d_i, K)` per row.
    pub k_tilde: Vec<usize>,
}

fn check_k(j_blocks: usize, k: usize) -> Result<()> {
    if j_blocks == 0 {
        return Err(Error::Config("J must be at least 1".into()));
    }
    if k == 0 || k > j_blocks {
        return Err(Error::Config(format!("K = {k} outside 1..={j_blocks}")));
    }
    Ok(())
}

fn check_degrees(degrees: &[usize]) -> Result<()> {
    if degrees.is_empty() {
        return Err(Error::Config("no constraint row blocks".into()));
    }
    if degrees.iter().any(|&d| d == 0) {
        return Err(Error::Config(
            "zero row degree: every constraint row must touch at least one block".into(),
        ));
    }
    Ok(())
}

/// Step sizes from the canonical table for `K` random blocks out of `J`.
pub fn table1_step_sizes(j_blocks: usize, k: usize, degrees: &[usize]) -> Result<StepSizes> {
    check_k(j_blocks, k)?;
    check_degrees(degrees)?;
    let i_blocks = degrees.len();
    let mut tau = Vec::with_capacity(i_blocks);
    let mut nu = Vec::with_capacity(i_blocks);
    let mut k_tilde = Vec::with_capacity(i_blocks);
    for &d in degrees {
        let kt = d.min(k);
        k_tilde.push(kt);
        tau.push(k as f64 / (kt * (2 * j_blocks - k)) as f64);
        nu.push((kt - 1) as f64 / kt as f64);
    }
    Ok(StepSizes { tau, nu, k_primal: k, k_dual: i_blocks, k_tilde })
}

/// Step sizes when only `K_I` of the `I` dual blocks are updated per
/// iteration. The dual step grows:
///
/// ```text
/// τ_i = K / ( K̃_i [ (2J−K)·K_I/I + K·(1 − K_I/I) ] )
/// ```
///
/// and reduces to the canonical table at `K_I = I`.
pub fn rdbcd_step_sizes(
    j_blocks: usize,
    i_blocks: usize,
    k: usize,
    k_i: usize,
    degrees: &[usize],
) -> Result<StepSizes> {
    check_k(j_blocks, k)?;
    check_degrees(degrees)?;
    if degrees.len() != i_blocks {
        return Err(Error::Config(format!(
            "degrees list has {} entries but I = {i_blocks}",
            degrees.len()
        )));
    }
    if k_i == 0 || k_i > i_blocks {
        return Err(Error::Config(format!("K_I = {k_i} outside 1..={i_blocks}")));
    }
    let mut tau = Vec::with_capacity(i_blocks);
    let mut nu = Vec::with_capacity(i_blocks);
    let mut k_tilde = Vec::with_capacity(i_blocks);
    // Multiply the bracket through by I so the quotient stays a ratio of
    // integers: τ = K·I / (K̃ [ (2J−K)·K_I + K·(I−K_I) ]).
    for &d in degrees {
        let kt = d.min(k);
        k_tilde.push(kt);
        let den = kt * ((2 * j_blocks - k) * k_i + k * (i_blocks - k_i));
        tau.push((k * i_blocks) as f64 / den as f64);
        nu.push((kt - 1) as f64 / kt as f64);
    }
    Ok(StepSizes { tau, nu, k_primal: k, k_dual: k_i, k_tilde })
}

/// Uniform steps `τ = 1/J`, `ν = 1 − 1/J` with all blocks updated: the
/// values implicitly used by two-block ADMM on the splitting reformulation.
pub fn sadmm_step_sizes(j_blocks: usize, i_blocks: usize) -> Result<StepSizes> {
    check_k(j_blocks, j_blocks)?;
    if i_blocks == 0 {
        return Err(Error::Config("I must be at least 1".into()));
    }
    let tau = vec![1.0 / j_blocks as f64; i_blocks];
    let nu = vec![(j_blocks - 1) as f64 / j_blocks as f64; i_blocks];
    Ok(StepSizes {
        tau,
        nu,
        k_primal: j_blocks,
        k_dual: i_blocks,
        k_tilde: vec![j_blocks; i_blocks],
    })
}

/// Proximal-Jacobian steps: full dual step `τ_i = 1`, no backward step,
/// bought by proximal weights
///
/// ```text
/// η_j = max_{i : A_ij ≠ 0} (d_i − 1) ρ I λ_max(A_ijᵀA_ij) / α_j
/// ```
///
/// where `α_j` is the strong-convexity modulus of the Bregman generator of
/// block `j`. The maximum over touching rows makes the single `η_j` satisfy
/// every per-(i, j) requirement.
pub fn pjadmm_step_sizes(
    degrees: &[usize],
    rho: f64,
    spectral: &dyn Fn(usize, usize) -> Option<f64>,
    alpha: &[f64],
    col_neighbors: &[Vec<usize>],
) -> Result<(StepSizes, Vec<f64>)> {
    check_degrees(degrees)?;
    if alpha.len() != col_neighbors.len() {
        return Err(Error::Config("alpha list must have one entry per column block".into()));
    }
    if alpha.iter().any(|&a| a <= 0.0) {
        return Err(Error::Config("strong-convexity moduli must be positive".into()));
    }
    if rho <= 0.0 {
        return Err(Error::Config("rho must be positive".into()));
    }
    let i_blocks = degrees.len();
    let j_blocks = col_neighbors.len();
    let mut eta = Vec::with_capacity(j_blocks);
    for (j, rows) in col_neighbors.iter().enumerate() {
        let mut best = 0.0f64;
        for &i in rows {
            let lam = spectral(i, j).ok_or_else(|| {
                Error::Config(format!("missing spectral bound for block ({i}, {j})"))
            })?;
            let req = (degrees[i] - 1) as f64 * rho * i_blocks as f64 * lam / alpha[j];
            best = best.max(req);
        }
        eta.push(best);
    }
    let steps = StepSizes {
        tau: vec![1.0; i_blocks],
        nu: vec![0.0; i_blocks],
        k_primal: j_blocks,
        k_dual: i_blocks,
        k_tilde: degrees.iter().map(|&d| d.min(j_blocks)).collect(),
    };
    Ok((steps, eta))
}

/// The certification constants for one constraint row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConstants {
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

/// One violated condition found by [`validity_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepViolation {
    TauNonPositive { row: usize, tau: f64 },
    /// `τ_i` exceeds `(J/(2J−K))·[4/K̃_i − (4 − 2K/J)(1 − ν_i)]`, which is
    /// the same condition as `β_i ≥ 0`.
    TauBound { row: usize, tau: f64, bound: f64 },
    /// `ν_i` outside `[0, 1 − 1/K̃_i]` or at/below the strict lower bound
    /// `1 − 2J/(K̃_i(2J−K))` when that bound is positive.
    NuInterval { row: usize, nu: f64, lower: f64, upper: f64 },
    BetaNegative { row: usize, beta: f64 },
    GammaNegative { row: usize, gamma: f64 },
    ZetaNegative { row: usize, zeta: f64 },
}

impl std::fmt::Display for StepViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepViolation::TauNonPositive { row, tau } => {
                write!(f, "row {row}: tau = {tau} is not positive")
            }
            StepViolation::TauBound { row, tau, bound } => {
                write!(f, "row {row}: tau = {tau} exceeds bound {bound}")
            }
            StepViolation::NuInterval { row, nu, lower, upper } => {
                write!(f, "row {row}: nu = {nu} outside (max(0-, {lower}), {upper}]")
            }
            StepViolation::BetaNegative { row, beta } => {
                write!(f, "row {row}: beta = {beta} < 0")
            }
            StepViolation::GammaNegative { row, gamma } => {
                write!(f, "row {row}: gamma = {gamma} < 0")
            }
            StepViolation::ZetaNegative { row, zeta } => {
                write!(f, "row {row}: zeta = {zeta} < 0")
            }
        }
    }
}

/// Outcome of [`validity_check`]: the derived constants plus any violated
/// conditions (a report, never an error).
#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub constants: Vec<StepConstants>,
    pub violations: Vec<StepViolation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates the certification constants for arbitrary `(τ, ν)`:
///
/// ```text
/// β_i = 4/K̃_i − (2 − K/J)[2(1 − ν_i) + τ_i]
/// γ_i = (3 − 2K/J)(1 − ν_i) + (1 − K/J)τ_i + 1/d_i − 2/K̃_i
/// ζ_i = γ_i + (1 − J/K)τ_i
/// ```
///
/// At the canonical values these reduce to `β_i = K/(JK̃_i)`,
/// `γ_i = 2(J−K)/(K̃_i(2J−K)) + 1/d_i − K/(JK̃_i)` and
/// `ζ_i = (J−K)/(K̃_i(2J−K)) + 1/d_i − K/(JK̃_i)`.
pub fn validity_check(s: &StepSizes, j_blocks: usize, degrees: &[usize]) -> ValidityReport {
    let jf = j_blocks as f64;
    let k = s.k_primal as f64;
    let mut constants = Vec::with_capacity(degrees.len());
    let mut violations = Vec::new();
    for (i, &d) in degrees.iter().enumerate() {
        let kt = s.k_tilde[i] as f64;
        let (tau, nu) = (s.tau[i], s.nu[i]);
        let beta = 4.0 / kt - (2.0 - k / jf) * (2.0 * (1.0 - nu) + tau);
        let gamma = (3.0 - 2.0 * k / jf) * (1.0 - nu) + (1.0 - k / jf) * tau + 1.0 / d as f64
            - 2.0 / kt;
        let zeta = gamma + (1.0 - jf / k) * tau;
        constants.push(StepConstants { beta, gamma, zeta });

        if tau <= 0.0 {
            violations.push(StepViolation::TauNonPositive { row: i, tau });
        }
        let tau_bound =
            jf / (2.0 * jf - k) * (4.0 / kt - (4.0 - 2.0 * k / jf) * (1.0 - nu));
        if tau > tau_bound + 1e-12 {
            violations.push(StepViolation::TauBound { row: i, tau, bound: tau_bound });
        }
        // ν must sit in [0, 1 − 1/K̃]; when the formula bound
        // 1 − 2J/(K̃(2J−K)) is positive it must be exceeded strictly.
        let upper = 1.0 - 1.0 / kt;
        let lower = 1.0 - 2.0 * jf / (kt * (2.0 * jf - k));
        let nu_ok = nu >= 0.0 && nu <= upper + 1e-12 && (lower < 0.0 || nu > lower);
        if !nu_ok {
            violations.push(StepViolation::NuInterval { row: i, nu, lower, upper });
        }
        if beta < -1e-12 {
            violations.push(StepViolation::BetaNegative { row: i, beta });
        }
        if gamma < -1e-12 {
            violations.push(StepViolation::GammaNegative { row: i, gamma });
        }
        if zeta < -1e-12 {
            violations.push(StepViolation::ZetaNegative { row: i, zeta });
        }
    }
    ValidityReport { constants, violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_values_for_three_blocks() {
        // J = 3, d = 3: (τ, ν) = (1/5, 0), (1/4, 1/2), (1/3, 2/3).
        let s = table1_step_sizes(3, 1, &[3]).unwrap();
        assert_eq!(s.tau[0], 1.0 / 5.0);
        assert_eq!(s.nu[0], 0.0);
        let s = table1_step_sizes(3, 2, &[3]).unwrap();
        assert_eq!(s.tau[0], 1.0 / 4.0);
        assert_eq!(s.nu[0], 1.0 / 2.0);
        assert_eq!(s.k_tilde[0], 2);
        let s = table1_step_sizes(3, 3, &[3]).unwrap();
        assert_eq!(s.tau[0], 1.0 / 3.0);
        assert_eq!(s.nu[0], 2.0 / 3.0);
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        assert!(table1_step_sizes(3, 0, &[3]).is_err());
        assert!(table1_step_sizes(3, 4, &[3]).is_err());
        assert!(table1_step_sizes(3, 1, &[0]).is_err());
        assert!(rdbcd_step_sizes(3, 2, 1, 0, &[2, 2]).is_err());
        assert!(rdbcd_step_sizes(3, 2, 1, 3, &[2, 2]).is_err());
    }

    #[test]
    fn rdbcd_reduces_to_table_at_full_dual() {
        for j in 1..=8usize {
            for k in 1..=j {
                for d in 1..=j {
                    let t = table1_step_sizes(j, k, &[d]).unwrap();
                    let r = rdbcd_step_sizes(j, 3, k, 3, &[d, d, d]).unwrap();
                    assert_relative_eq!(r.tau[0], t.tau[0], max_relative = 1e-15);
                    assert_eq!(r.nu[0], t.nu[0]);
                }
            }
        }
    }

    #[test]
    fn rdbcd_single_block_closed_form() {
        // I = J, K = K_I = 1: τ = I/(3J−2); at J = 4 this is 0.4 > 1/3.
        for j in [2usize, 3, 4, 7] {
            let degrees = vec![1; j];
            let r = rdbcd_step_sizes(j, j, 1, 1, &degrees).unwrap();
            assert_eq!(r.tau[0], j as f64 / (3 * j - 2) as f64);
        }
        let r = rdbcd_step_sizes(4, 4, 1, 1, &[1, 1, 1, 1]).unwrap();
        assert_eq!(r.tau[0], 0.4);
        assert!(r.tau[0] > 1.0 / 3.0);
    }

    #[test]
    fn rdbcd_direct_evaluation() {
        // J=4, I=2, K=2, K_I=1, d=2: τ = 2/(2·[6·0.5 + 2·0.5]) = 0.25.
        let r = rdbcd_step_sizes(4, 2, 2, 1, &[2, 2]).unwrap();
        assert_eq!(r.tau[0], 0.25);
        assert_eq!(r.nu[0], 0.5);
    }

    #[test]
    fn sadmm_values() {
        let s = sadmm_step_sizes(1, 1).unwrap();
        assert_eq!((s.tau[0], s.nu[0]), (1.0, 0.0));
        let s = sadmm_step_sizes(3, 1).unwrap();
        assert_eq!(s.tau[0], 1.0 / 3.0);
        assert_eq!(s.nu[0], 2.0 / 3.0);
        let s = sadmm_step_sizes(101, 100).unwrap();
        assert_relative_eq!(s.tau[0], 0.009900990099009901, epsilon = 1e-18);
        assert_relative_eq!(s.nu[0], 0.9900990099009901, epsilon = 1e-18);
    }

    #[test]
    fn pjadmm_eta_formula() {
        // d_i = 1 everywhere → η = 0, exact updates with full dual step.
        let spectral = |_i: usize, _j: usize| Some(4.0);
        let (s, eta) =
            pjadmm_step_sizes(&[1], 1.0, &spectral, &[1.0], &[vec![0]]).unwrap();
        assert_eq!(eta[0], 0.0);
        assert_eq!((s.tau[0], s.nu[0]), (1.0, 0.0));
        // d = 3, ρ = 1, I = 1, λ = 4, α = 1 → η = 8.
        let (_, eta) = pjadmm_step_sizes(&[3], 1.0, &spectral, &[1.0], &[vec![0]]).unwrap();
        assert_eq!(eta[0], 8.0);
        // Missing bound is a configuration error.
        let none = |_: usize, _: usize| None;
        assert!(pjadmm_step_sizes(&[3], 1.0, &none, &[1.0], &[vec![0]]).is_err());
    }

    #[test]
    fn pjadmm_eta_takes_max_over_rows() {
        let spectral = |i: usize, _j: usize| Some(if i == 0 { 1.0 } else { 5.0 });
        let (_, eta) =
            pjadmm_step_sizes(&[2, 3], 1.0, &spectral, &[2.0], &[vec![0, 1]]).unwrap();
        // Row 0: (2−1)·1·2·1/2 = 1; row 1: (3−1)·1·2·5/2 = 10.
        assert_eq!(eta[0], 10.0);
    }

    #[test]
    fn canonical_steps_always_pass() {
        for j in 1..=12usize {
            for k in 1..=j {
                for d in 1..=j {
                    let s = table1_step_sizes(j, k, &[d]).unwrap();
                    let rep = validity_check(&s, j, &[d]);
                    assert!(
                        rep.is_valid(),
                        "J={j} K={k} d={d}: {:?}",
                        rep.violations
                    );
                }
            }
        }
    }

    #[test]
    fn constants_reduce_to_closed_forms_at_canonical_steps() {
        for j in 1..=10usize {
            for k in 1..=j {
                for d in 1..=j {
                    let s = table1_step_sizes(j, k, &[d]).unwrap();
                    let rep = validity_check(&s, j, &[d]);
                    let kt = d.min(k) as f64;
                    let (jf, kf, df) = (j as f64, k as f64, d as f64);
                    let beta = kf / (jf * kt);
                    let gamma =
                        2.0 * (jf - kf) / (kt * (2.0 * jf - kf)) + 1.0 / df - kf / (jf * kt);
                    let zeta = (jf - kf) / (kt * (2.0 * jf - kf)) + 1.0 / df - kf / (jf * kt);
                    assert_relative_eq!(rep.constants[0].beta, beta, epsilon = 1e-12);
                    assert_relative_eq!(rep.constants[0].gamma, gamma, epsilon = 1e-12);
                    assert_relative_eq!(rep.constants[0].zeta, zeta, epsilon = 1e-12);
                }
            }
        }
        // K = J with d_i = 1: β = 1, ζ = 0.
        let s = table1_step_sizes(4, 4, &[1]).unwrap();
        let rep = validity_check(&s, 4, &[1]);
        assert_relative_eq!(rep.constants[0].beta, 1.0, epsilon = 1e-14);
        assert_relative_eq!(rep.constants[0].zeta, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn doubled_tau_reports_negative_beta() {
        let mut s = table1_step_sizes(5, 3, &[4]).unwrap();
        s.tau[0] *= 2.0 * 2.0; // well beyond the bound
        let rep = validity_check(&s, 5, &[4]);
        assert!(rep.constants[0].beta < 0.0);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, StepViolation::BetaNegative { .. })));
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, StepViolation::TauBound { .. })));
    }

    #[test]
    fn nu_outside_interval_is_reported() {
        let mut s = table1_step_sizes(5, 3, &[4]).unwrap();
        s.nu[0] = 0.95; // above 1 − 1/K̃ = 2/3
        let rep = validity_check(&s, 5, &[4]);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, StepViolation::NuInterval { .. })));
    }

    #[test]
    fn table_monotone_in_k() {
        // τ grows from 1/(2J−1) to 1/d_i and ν from 0 to 1 − 1/d_i.
        for j in 1..=12usize {
            for d in 1..=j {
                let mut prev_tau = 0.0;
                let mut prev_nu = -1.0;
                for k in 1..=j {
                    let s = table1_step_sizes(j, k, &[d]).unwrap();
                    assert!(s.tau[0] >= prev_tau - 1e-15, "J={j} d={d} K={k}");
                    assert!(s.nu[0] >= prev_nu, "J={j} d={d} K={k}");
                    prev_tau = s.tau[0];
                    prev_nu = s.nu[0];
                }
                assert_relative_eq!(prev_tau, 1.0 / d as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn rdbcd_tau_dominates_table_tau() {
        for j in 1..=12usize {
            for k in 1..=j {
                for d in 1..=j {
                    let t = table1_step_sizes(j, k, &[d]).unwrap();
                    for i in 1..=6usize {
                        for ki in 1..=i {
                            let degrees = vec![d; i];
                            let r = rdbcd_step_sizes(j, i, k, ki, &degrees).unwrap();
                            assert!(
                                r.tau[0] >= t.tau[0] - 1e-15,
                                "J={j} K={k} d={d} I={i} K_I={ki}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn overlapping_chain_structure_gives_half_half() {
        // Degree-2 rows with all blocks updated: τ_i = ν_i = 0.5 exactly.
        for j in 2..=12usize {
            let degrees = vec![2; j - 1];
            let s = table1_step_sizes(j, j, &degrees).unwrap();
            for i in 0..j - 1 {
                assert_eq!(s.tau[i], 0.5);
                assert_eq!(s.nu[i], 0.5);
            }
        }
    }
}
