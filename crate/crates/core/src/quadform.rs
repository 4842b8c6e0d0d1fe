//! Structural quadratic forms over per-block products `z_ij = A_ij x_j`.
//!
//! Both forms are block-diagonal across constraint rows. For row `i` with
//! active column set `S_i` and centering weight `1/c_i`:
//!
//! ```text
//! ‖z‖²_row_i = Σ_{j ∈ S_i} ‖z_ij‖² − (1/c_i) ‖Σ_{j ∈ S_i} z_ij‖²
//! ```
//!
//! with `c_i = d_i` and `S_i = N(i)` for the full form, and
//! `c_i = K̃_i = min(K, d_i)`, `S_i = selected ∩ N(i)` for the per-iteration
//! form. Since `c_i ≥ |S_i|` the forms are positive semi-definite; they are
//! evaluated in the equivalent mean-deviation arrangement
//! `Σ ‖z_ij − m_i‖² + (1/|S_i| − 1/c_i)‖Σ z_ij‖²` so roundoff cannot push the
//! result negative.

use nalgebra::DVector;

use crate::block::{BlockMatrix, ZVector};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct RowForm {
    row: usize,
    cols: Vec<usize>,
    centering: usize,
}

/// Evaluator for a block-diagonal structural quadratic form; never
/// materializes the underlying matrix.
#[derive(Debug, Clone)]
pub struct QuadForm {
    rows: Vec<RowForm>,
}

impl QuadForm {
    /// `‖z‖²` in this form. Entries of `z` outside the active sets are
    /// ignored.
    pub fn norm_sq(&self, z: &ZVector) -> f64 {
        let mut total = 0.0;
        for rf in &self.rows {
            if rf.cols.is_empty() {
                continue;
            }
            let mut sum = DVector::zeros(z.row_size(rf.row));
            for &j in &rf.cols {
                let e = z
                    .entry(rf.row, j)
                    .unwrap_or_else(|| panic!("z is missing entry ({}, {j})", rf.row));
                sum += e;
            }
            let count = rf.cols.len() as f64;
            let mean = &sum / count;
            let mut dev = 0.0;
            for &j in &rf.cols {
                let e = z.entry(rf.row, j).unwrap();
                dev += (e - &mean).norm_squared();
            }
            let slack = (1.0 / count - 1.0 / rf.centering as f64) * sum.norm_squared();
            total += dev + slack;
        }
        total
    }

    /// `‖u − v‖²` in this form.
    pub fn dist_sq(&self, u: &ZVector, v: &ZVector) -> f64 {
        self.norm_sq(&u.sub(v))
    }
}

/// Form with active sets `N(i)` and centering `d_i`. Measures, per row, how
/// far the stored products deviate from their row mean.
pub fn build_q(a: &BlockMatrix) -> QuadForm {
    let rows = (0..a.num_row_blocks())
        .map(|i| RowForm {
            row: i,
            cols: a.row_neighbors(i).to_vec(),
            centering: a.row_neighbors(i).len().max(1),
        })
        .collect();
    QuadForm { rows }
}

/// Per-iteration form restricted to the selected column blocks, with
/// centering `K̃_i = min(K, d_i)`.
pub fn build_pt(a: &BlockMatrix, selected: &[usize], k_primal: usize) -> Result<QuadForm> {
    let nj = a.num_col_blocks();
    if k_primal == 0 || k_primal > nj {
        return Err(Error::Config(format!(
            "K = {k_primal} outside 1..={nj} column blocks"
        )));
    }
    if selected.len() != k_primal {
        return Err(Error::Config(format!(
            "selected set has {} indices but K = {k_primal}",
            selected.len()
        )));
    }
    if selected.iter().any(|&j| j >= nj) {
        return Err(Error::Config("selected column index out of range".into()));
    }
    let rows = (0..a.num_row_blocks())
        .map(|i| {
            let cols: Vec<usize> = a
                .row_neighbors(i)
                .iter()
                .copied()
                .filter(|j| selected.contains(j))
                .collect();
            let k_tilde = k_primal.min(a.row_neighbors(i).len()).max(1);
            RowForm { row: i, cols, centering: k_tilde }
        })
        .collect();
    Ok(QuadForm { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Block, BlockPartition, BlockVector};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn three_col_matrix() -> BlockMatrix {
        // One row block of size 2 touching all three columns: d_0 = 3.
        let p = BlockPartition::new(vec![2], vec![2, 2, 2]).unwrap();
        BlockMatrix::from_blocks(
            p,
            vec![
                ((0, 0), Block::identity(2)),
                ((0, 1), Block::identity(2)),
                ((0, 2), Block::identity(2)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn q_vanishes_on_constant_row_blocks() {
        let a = three_col_matrix();
        let q = build_q(&a);
        let mut z = ZVector::zeros_like(&a);
        let v = DVector::from_vec(vec![1.5, -2.0]);
        for j in 0..3 {
            z.set_entry(0, j, v.clone());
        }
        assert_relative_eq!(q.norm_sq(&z), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn q_single_nonzero_entry_in_degree_two_row() {
        // d_0 = 2: contribution is (1 − 1/2)‖z‖² = ‖z‖²/2.
        let p = BlockPartition::new(vec![2], vec![2, 2]).unwrap();
        let a = BlockMatrix::from_blocks(
            p,
            vec![((0, 0), Block::identity(2)), ((0, 1), Block::identity(2))],
        )
        .unwrap();
        let q = build_q(&a);
        let mut z = ZVector::zeros_like(&a);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        z.set_entry(0, 0, v.clone());
        assert_relative_eq!(q.norm_sq(&z), 0.5 * v.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn pt_with_all_columns_equals_q_when_k_covers_degrees() {
        let a = three_col_matrix();
        let q = build_q(&a);
        let pt = build_pt(&a, &[0, 1, 2], 3).unwrap();
        let mut rng = crate::seeded_rng(&[3]);
        for _ in 0..10 {
            let mut z = ZVector::zeros_like(&a);
            for j in 0..3 {
                z.set_entry(0, j, DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)));
            }
            assert_relative_eq!(q.norm_sq(&z), pt.norm_sq(&z), max_relative = 1e-12);
        }
    }

    #[test]
    fn pt_single_selected_column_vanishes() {
        // K = 1 ⇒ K̃_i = 1 and each row has at most one active term:
        // ‖z_ij‖² − ‖z_ij‖² = 0.
        let a = three_col_matrix();
        let pt = build_pt(&a, &[1], 1).unwrap();
        let mut z = ZVector::zeros_like(&a);
        z.set_entry(0, 1, DVector::from_vec(vec![5.0, -1.0]));
        assert_relative_eq!(pt.norm_sq(&z), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pt_rejects_bad_selection() {
        let a = three_col_matrix();
        assert!(build_pt(&a, &[0, 1], 3).is_err());
        assert!(build_pt(&a, &[9], 1).is_err());
        assert!(build_pt(&a, &[0], 0).is_err());
    }

    /// Dense materialization oracle: assemble the row matrix
    /// `diag(W_i) − (1/c) W_i W_iᵀ` over the stacked `z_i` and compare.
    fn dense_row_value(
        z_entries: &[(usize, DVector<f64>)],
        active: &[usize],
        all_cols: &[usize],
        c: usize,
        m_i: usize,
    ) -> f64 {
        let nj = all_cols.len();
        let dim = nj * m_i;
        let mut w = DMatrix::<f64>::zeros(dim, m_i);
        for (slot, &j) in all_cols.iter().enumerate() {
            if active.contains(&j) {
                for k in 0..m_i {
                    w[(slot * m_i + k, k)] = 1.0;
                }
            }
        }
        let mut diag = DMatrix::<f64>::zeros(dim, dim);
        for (slot, &j) in all_cols.iter().enumerate() {
            if active.contains(&j) {
                for k in 0..m_i {
                    diag[(slot * m_i + k, slot * m_i + k)] = 1.0;
                }
            }
        }
        let q = diag - (&w * w.transpose()) / c as f64;
        let mut zvec = DVector::<f64>::zeros(dim);
        for (slot, &j) in all_cols.iter().enumerate() {
            if let Some((_, v)) = z_entries.iter().find(|(jj, _)| *jj == j) {
                zvec.rows_mut(slot * m_i, m_i).copy_from(v);
            }
        }
        (q * &zvec).dot(&zvec)
    }

    #[test]
    fn random_values_match_dense_materialization() {
        let mut rng = crate::seeded_rng(&[5]);
        // 2×3-block pattern with a hole at (1, 0).
        let p = BlockPartition::new(vec![2, 3], vec![1, 2, 2]).unwrap();
        let m_of = |i: usize| if i == 0 { 2 } else { 3 };
        let entries = vec![
            ((0, 0), Block::Dense(DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-1.0..1.0)))),
            ((0, 1), Block::Dense(DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)))),
            ((0, 2), Block::Dense(DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)))),
            ((1, 1), Block::Dense(DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0)))),
            ((1, 2), Block::Dense(DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0)))),
        ];
        let a = BlockMatrix::from_blocks(p, entries).unwrap();
        let x = BlockVector::from_data(
            vec![1, 2, 2],
            DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let z = ZVector::from_product(&a, &x).unwrap();

        let q = build_q(&a);
        let mut want_q = 0.0;
        for i in 0..2 {
            let cols = a.row_neighbors(i).to_vec();
            let entries: Vec<_> =
                cols.iter().map(|&j| (j, z.entry(i, j).unwrap().clone())).collect();
            want_q += dense_row_value(&entries, &cols, &cols, cols.len(), m_of(i));
        }
        assert_relative_eq!(q.norm_sq(&z), want_q, max_relative = 1e-10);

        let selected = vec![0usize, 2];
        let pt = build_pt(&a, &selected, 2).unwrap();
        let mut want_p = 0.0;
        for i in 0..2 {
            let cols = a.row_neighbors(i).to_vec();
            let active: Vec<usize> =
                cols.iter().copied().filter(|j| selected.contains(j)).collect();
            let k_tilde = 2usize.min(cols.len());
            let entries: Vec<_> =
                active.iter().map(|&j| (j, z.entry(i, j).unwrap().clone())).collect();
            want_p += dense_row_value(&entries, &active, &cols, k_tilde, m_of(i));
        }
        assert_relative_eq!(pt.norm_sq(&z), want_p, max_relative = 1e-10);
    }

    proptest::proptest! {
        /// PSD: both forms are nonnegative on random inputs.
        #[test]
        fn forms_are_nonnegative(seed in 0u64..500) {
            let mut rng = crate::seeded_rng(&[17, seed]);
            let ni = rng.gen_range(1..=4usize);
            let nj = rng.gen_range(1..=4usize);
            let row_sizes: Vec<usize> = (0..ni).map(|_| rng.gen_range(1..=3)).collect();
            let col_sizes: Vec<usize> = (0..nj).map(|_| rng.gen_range(1..=3)).collect();
            let p = BlockPartition::new(row_sizes.clone(), col_sizes.clone()).unwrap();
            let mut entries = Vec::new();
            for i in 0..ni {
                let mut any = false;
                for j in 0..nj {
                    if rng.gen_bool(0.6) {
                        any = true;
                        entries.push(((i, j), Block::Dense(DMatrix::from_fn(
                            row_sizes[i], col_sizes[j], |_, _| rng.gen_range(-1.0..1.0)))));
                    }
                }
                if !any {
                    entries.push(((i, 0), Block::Dense(DMatrix::from_fn(
                        row_sizes[i], col_sizes[0], |_, _| rng.gen_range(-1.0..1.0)))));
                }
            }
            let a = BlockMatrix::from_blocks(p, entries).unwrap();
            let n_total: usize = col_sizes.iter().sum();
            let x = BlockVector::from_data(
                col_sizes.clone(),
                DVector::from_fn(n_total, |_, _| rng.gen_range(-10.0..10.0)),
            ).unwrap();
            let z = ZVector::from_product(&a, &x).unwrap();
            let q = build_q(&a);
            proptest::prop_assert!(q.norm_sq(&z) >= 0.0);
            let k = rng.gen_range(1..=nj);
            let sel = rand::seq::index::sample(&mut rng, nj, k).into_vec();
            let pt = build_pt(&a, &sel, k).unwrap();
            proptest::prop_assert!(pt.norm_sq(&z) >= 0.0);
        }
    }
}
