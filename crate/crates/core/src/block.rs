//! Block-partitioned matrices and vectors.
//!
//! A constraint matrix `A` is partitioned into `I × J` blocks. Only nonzero
//! blocks are stored; the per-row count of stored blocks (the row degree
//! `d_i`) drives the solver's step sizes, so zero blocks must genuinely be
//! absent rather than stored as zeros.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Row and column block sizes of a partitioned matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

impl BlockPartition {
    pub fn new(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Result<Self> {
        if row_sizes.is_empty() || col_sizes.is_empty() {
            return Err(Error::Dimension(
                "partition needs at least one row block and one column block".into(),
            ));
        }
        if row_sizes.iter().chain(col_sizes.iter()).any(|&s| s == 0) {
            return Err(Error::Dimension("block sizes must be strictly positive".into()));
        }
        let row_offsets = offsets(&row_sizes);
        let col_offsets = offsets(&col_sizes);
        Ok(Self { row_sizes, col_sizes, row_offsets, col_offsets })
    }

    pub fn num_row_blocks(&self) -> usize {
        self.row_sizes.len()
    }

    pub fn num_col_blocks(&self) -> usize {
        self.col_sizes.len()
    }

    pub fn row_size(&self, i: usize) -> usize {
        self.row_sizes[i]
    }

    pub fn col_size(&self, j: usize) -> usize {
        self.col_sizes[j]
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn col_sizes(&self) -> &[usize] {
        &self.col_sizes
    }

    pub fn row_offset(&self, i: usize) -> usize {
        self.row_offsets[i]
    }

    pub fn col_offset(&self, j: usize) -> usize {
        self.col_offsets[j]
    }

    pub fn total_rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn total_cols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }
}

/// One stored block of a [`BlockMatrix`].
///
/// Identity-like blocks are kept symbolic so that decompositions such as
/// `A = [I I I]` over large vectorized matrix variables never materialize an
/// `n × n` identity.
#[derive(Debug, Clone)]
pub enum Block {
    Dense(DMatrix<f64>),
    ScaledIdentity { scale: f64, dim: usize },
}

impl Block {
    pub fn identity(dim: usize) -> Self {
        Block::ScaledIdentity { scale: 1.0, dim }
    }

    pub fn nrows(&self) -> usize {
        match self {
            Block::Dense(m) => m.nrows(),
            Block::ScaledIdentity { dim, .. } => *dim,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Block::Dense(m) => m.ncols(),
            Block::ScaledIdentity { dim, .. } => *dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Block::Dense(m) => m.iter().all(|&v| v == 0.0),
            Block::ScaledIdentity { scale, .. } => *scale == 0.0,
        }
    }

    /// `B v`
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Block::Dense(m) => m * v,
            Block::ScaledIdentity { scale, .. } => v * *scale,
        }
    }

    /// `Bᵀ w`
    pub fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Block::Dense(m) => m.transpose() * w,
            Block::ScaledIdentity { scale, .. } => w * *scale,
        }
    }

    /// Adds `BᵀB v` into `acc`.
    fn gram_apply_into(&self, v: &DVector<f64>, acc: &mut DVector<f64>) {
        match self {
            Block::Dense(m) => {
                let bv = m * v;
                acc.gemv_tr(1.0, m, &bv, 1.0);
            }
            Block::ScaledIdentity { scale, .. } => {
                acc.axpy(scale * scale, v, 1.0);
            }
        }
    }

    /// Adds `BᵀB` into the dense `acc` (for small exact eigensolves).
    fn gram_into(&self, acc: &mut DMatrix<f64>) {
        match self {
            Block::Dense(m) => {
                *acc += m.transpose() * m;
            }
            Block::ScaledIdentity { scale, dim } => {
                for k in 0..*dim {
                    acc[(k, k)] += scale * scale;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Block::Dense(m) => m.clone(),
            Block::ScaledIdentity { scale, dim } => DMatrix::identity(*dim, *dim) * *scale,
        }
    }
}

/// Sparse-at-block-granularity matrix with dense (or symbolic identity)
/// blocks.
#[derive(Debug)]
pub struct BlockMatrix {
    partition: BlockPartition,
    blocks: BTreeMap<(usize, usize), Block>,
    row_pattern: Vec<Vec<usize>>,
    col_pattern: Vec<Vec<usize>>,
    spectral_cache: Vec<OnceLock<f64>>,
}

impl BlockMatrix {
    /// Assembles a block matrix; zero blocks are dropped from the pattern.
    pub fn from_blocks(
        partition: BlockPartition,
        entries: Vec<((usize, usize), Block)>,
    ) -> Result<Self> {
        let ni = partition.num_row_blocks();
        let nj = partition.num_col_blocks();
        let mut blocks = BTreeMap::new();
        for ((i, j), b) in entries {
            if i >= ni || j >= nj {
                return Err(Error::Dimension(format!(
                    "block index ({i}, {j}) out of bounds for {ni}×{nj} partition"
                )));
            }
            if b.nrows() != partition.row_size(i) || b.ncols() != partition.col_size(j) {
                return Err(Error::Dimension(format!(
                    "block ({i}, {j}) is {}×{} but the partition requires {}×{}",
                    b.nrows(),
                    b.ncols(),
                    partition.row_size(i),
                    partition.col_size(j)
                )));
            }
            if b.is_zero() {
                continue;
            }
            if blocks.insert((i, j), b).is_some() {
                return Err(Error::Dimension(format!("duplicate block at ({i}, {j})")));
            }
        }
        let mut row_pattern = vec![Vec::new(); ni];
        let mut col_pattern = vec![Vec::new(); nj];
        for &(i, j) in blocks.keys() {
            row_pattern[i].push(j);
            col_pattern[j].push(i);
        }
        // BTreeMap iteration already yields sorted (i, j) pairs.
        let spectral_cache = (0..nj).map(|_| OnceLock::new()).collect();
        Ok(Self { partition, blocks, row_pattern, col_pattern, spectral_cache })
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn num_row_blocks(&self) -> usize {
        self.partition.num_row_blocks()
    }

    pub fn num_col_blocks(&self) -> usize {
        self.partition.num_col_blocks()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Block> {
        self.blocks.get(&(i, j))
    }

    /// Column indices of stored blocks in row block `i`, sorted.
    pub fn row_neighbors(&self, i: usize) -> &[usize] {
        &self.row_pattern[i]
    }

    /// Row indices of stored blocks in column block `j`, sorted.
    pub fn col_neighbors(&self, j: usize) -> &[usize] {
        &self.col_pattern[j]
    }

    /// Row degrees `d_i`: number of stored blocks per row block.
    pub fn degrees(&self) -> Vec<usize> {
        self.row_pattern.iter().map(Vec::len).collect()
    }

    /// `Σ_{j ∈ N(i)} A_ij x_j`, summing only stored blocks.
    pub fn row_block_apply(&self, x: &BlockVector, i: usize) -> Result<DVector<f64>> {
        if x.sizes() != self.partition.col_sizes() {
            return Err(Error::Dimension(
                "vector does not conform to the column partition".into(),
            ));
        }
        let mut acc = DVector::zeros(self.partition.row_size(i));
        for &j in &self.row_pattern[i] {
            let piece = self.blocks[&(i, j)].apply(&x.block_owned(j));
            acc += piece;
        }
        Ok(acc)
    }

    /// Full product `A x`, row-partitioned.
    pub fn apply(&self, x: &BlockVector) -> Result<BlockVector> {
        let mut out = BlockVector::zeros(self.partition.row_sizes().to_vec());
        for i in 0..self.num_row_blocks() {
            let r = self.row_block_apply(x, i)?;
            out.set_block(i, &r);
        }
        Ok(out)
    }

    /// `A_jᵀ w` for a row-partitioned `w` (only stored blocks contribute).
    pub fn col_block_apply_transpose(&self, w: &BlockVector, j: usize) -> Result<DVector<f64>> {
        if w.sizes() != self.partition.row_sizes() {
            return Err(Error::Dimension(
                "vector does not conform to the row partition".into(),
            ));
        }
        let mut acc = DVector::zeros(self.partition.col_size(j));
        for &i in &self.col_pattern[j] {
            acc += self.blocks[&(i, j)].apply_transpose(&w.block_owned(i));
        }
        Ok(acc)
    }

    /// Per-row pieces `A_ij v` for all stored blocks in column `j`.
    pub fn col_block_apply(&self, v: &DVector<f64>, j: usize) -> Vec<(usize, DVector<f64>)> {
        self.col_pattern[j]
            .iter()
            .map(|&i| (i, self.blocks[&(i, j)].apply(v)))
            .collect()
    }

    /// `(A_jᵀ A_j) v` for column block `j`.
    pub fn col_gram_apply(&self, v: &DVector<f64>, j: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.partition.col_size(j));
        for &i in &self.col_pattern[j] {
            self.blocks[&(i, j)].gram_apply_into(v, &mut acc);
        }
        acc
    }

    /// Dense `A_jᵀ A_j` for column block `j`.
    pub fn col_gram_dense(&self, j: usize) -> DMatrix<f64> {
        let n = self.partition.col_size(j);
        let mut acc = DMatrix::zeros(n, n);
        for &i in &self.col_pattern[j] {
            self.blocks[&(i, j)].gram_into(&mut acc);
        }
        acc
    }

    /// If `A_jᵀ A_j = c·I`, returns `c`. Holds whenever every stored block of
    /// the column is a scaled identity, which is what makes a primal update a
    /// pure proximal step.
    pub fn col_gram_scale(&self, j: usize) -> Option<f64> {
        let mut c = 0.0;
        for &i in &self.col_pattern[j] {
            match &self.blocks[&(i, j)] {
                Block::ScaledIdentity { scale, .. } => c += scale * scale,
                Block::Dense(_) => return None,
            }
        }
        Some(c)
    }

    /// Largest eigenvalue of `A_jᵀ A_j`, cached per column.
    ///
    /// Exact symmetric eigensolve for blocks of dimension ≤ 64 (and for the
    /// all-identity case, where the value is available in closed form);
    /// otherwise power iteration capped at 500 steps with relative tolerance
    /// 1e-8.
    pub fn column_spectral_bound(&self, j: usize) -> f64 {
        *self.spectral_cache[j].get_or_init(|| self.compute_spectral_bound(j))
    }

    fn compute_spectral_bound(&self, j: usize) -> f64 {
        if self.col_pattern[j].is_empty() {
            return 0.0;
        }
        if let Some(c) = self.col_gram_scale(j) {
            return c;
        }
        let n = self.partition.col_size(j);
        if n <= 64 {
            let gram = self.col_gram_dense(j);
            let eig = gram.symmetric_eigen();
            return eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        }
        // Power iteration on the Gram operator; deterministic start vector.
        let mut v = DVector::from_fn(n, |k, _| 1.0 + 0.01 * ((k % 13) as f64));
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = self.col_gram_apply(&v, j);
            let next = w.norm();
            if next == 0.0 {
                return 0.0;
            }
            let rayleigh = v.dot(&w);
            if (rayleigh - lambda).abs() <= 1e-8 * rayleigh.abs().max(1e-300) {
                return rayleigh;
            }
            lambda = rayleigh;
            v = w / next;
        }
        lambda
    }

    /// Largest eigenvalue of `A_ijᵀ A_ij` for a single stored block.
    pub fn block_spectral_bound(&self, i: usize, j: usize) -> Option<f64> {
        self.blocks.get(&(i, j)).map(|b| match b {
            Block::ScaledIdentity { scale, .. } => scale * scale,
            Block::Dense(m) => {
                let gram = m.transpose() * m;
                gram.symmetric_eigen().eigenvalues.iter().cloned().fold(0.0, f64::max)
            }
        })
    }

    /// Assembles the full dense matrix. Intended for small problems and
    /// debugging output.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.partition.total_rows(), self.partition.total_cols());
        for (&(i, j), b) in &self.blocks {
            let dense = b.to_dense();
            let (r0, c0) = (self.partition.row_offset(i), self.partition.col_offset(j));
            out.view_mut((r0, c0), (dense.nrows(), dense.ncols())).copy_from(&dense);
        }
        out
    }
}

/// A real vector split into consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    data: DVector<f64>,
}

impl BlockVector {
    pub fn zeros(sizes: Vec<usize>) -> Self {
        let offsets = offsets(&sizes);
        let total = *offsets.last().unwrap();
        Self { sizes, offsets, data: DVector::zeros(total) }
    }

    pub fn from_data(sizes: Vec<usize>, data: DVector<f64>) -> Result<Self> {
        let offsets = offsets(&sizes);
        if *offsets.last().unwrap() != data.len() {
            return Err(Error::Dimension(format!(
                "data of length {} does not match block sizes summing to {}",
                data.len(),
                offsets.last().unwrap()
            )));
        }
        Ok(Self { sizes, offsets, data })
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Self {
        let sizes: Vec<usize> = blocks.iter().map(DVector::len).collect();
        let mut out = Self::zeros(sizes);
        for (j, b) in blocks.iter().enumerate() {
            out.set_block(j, b);
        }
        out
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn block_owned(&self, j: usize) -> DVector<f64> {
        self.data.rows(self.offsets[j], self.sizes[j]).into_owned()
    }

    pub fn block(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(self.offsets[j], self.sizes[j])
    }

    pub fn set_block(&mut self, j: usize, v: &DVector<f64>) {
        assert_eq!(v.len(), self.sizes[j], "block {j} size mismatch");
        self.data.rows_mut(self.offsets[j], self.sizes[j]).copy_from(v);
    }

    /// `self_j += alpha * v`
    pub fn axpy_block(&mut self, j: usize, alpha: f64, v: &DVector<f64>) {
        assert_eq!(v.len(), self.sizes[j], "block {j} size mismatch");
        self.data.rows_mut(self.offsets[j], self.sizes[j]).axpy(alpha, v, 1.0);
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { sizes: self.sizes.clone(), offsets: self.offsets.clone(), data: &self.data * alpha }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.sizes, other.sizes, "partition mismatch");
        Self {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            data: &self.data - &other.data,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.sizes, other.sizes, "partition mismatch");
        Self {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            data: &self.data + &other.data,
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.sizes, other.sizes, "partition mismatch");
        self.data.axpy(alpha, &other.data, 1.0);
    }
}

/// The per-block products `z_ij = A_ij x_j`, stored only for the sparsity
/// pattern of `A`. Inputs to the structural quadratic forms.
#[derive(Debug, Clone)]
pub struct ZVector {
    row_sizes: Vec<usize>,
    entries: BTreeMap<(usize, usize), DVector<f64>>,
}

impl ZVector {
    pub fn zeros_like(a: &BlockMatrix) -> Self {
        let row_sizes = a.partition().row_sizes().to_vec();
        let entries = a
            .blocks
            .keys()
            .map(|&(i, j)| ((i, j), DVector::zeros(row_sizes[i])))
            .collect();
        Self { row_sizes, entries }
    }

    pub fn from_product(a: &BlockMatrix, x: &BlockVector) -> Result<Self> {
        if x.sizes() != a.partition().col_sizes() {
            return Err(Error::Dimension(
                "vector does not conform to the column partition".into(),
            ));
        }
        let row_sizes = a.partition().row_sizes().to_vec();
        let entries = a
            .blocks
            .iter()
            .map(|(&(i, j), b)| ((i, j), b.apply(&x.block_owned(j))))
            .collect();
        Ok(Self { row_sizes, entries })
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&DVector<f64>> {
        self.entries.get(&(i, j))
    }

    pub fn add_entry(&mut self, i: usize, j: usize, delta: &DVector<f64>) {
        let e = self
            .entries
            .get_mut(&(i, j))
            .unwrap_or_else(|| panic!("({i}, {j}) is not in the sparsity pattern"));
        *e += delta;
    }

    pub fn set_entry(&mut self, i: usize, j: usize, value: DVector<f64>) {
        assert_eq!(value.len(), self.row_sizes[i]);
        let e = self
            .entries
            .get_mut(&(i, j))
            .unwrap_or_else(|| panic!("({i}, {j}) is not in the sparsity pattern"));
        *e = value;
    }

    pub fn row_size(&self, i: usize) -> usize {
        self.row_sizes[i]
    }

    /// `Σ_{j ∈ N(i)} z_ij`, i.e. the row-block product `A_i x`.
    pub fn row_sum(&self, i: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.row_sizes[i]);
        for ((bi, _), v) in self.entries.range((i, 0)..(i + 1, 0)) {
            debug_assert_eq!(*bi, i);
            acc += v;
        }
        acc
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.row_sizes, other.row_sizes);
        let entries = self
            .entries
            .iter()
            .map(|(&k, v)| {
                let w = other.entries.get(&k).expect("pattern mismatch");
                (k, v - w)
            })
            .collect();
        Self { row_sizes: self.row_sizes.clone(), entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DVector<f64>)> {
        self.entries.iter()
    }
}
