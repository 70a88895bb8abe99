//! Compressed sparse column matrices and the SPD factorization used by every
//! likelihood, sampler and predictor in the crate.
//!
//! Structural entries are kept even when their numerical value is zero. The
//! factorization analyses structure only, so assembling a matrix with explicit
//! zeros (for example a Kronecker product with a zero block) guarantees that a
//! later matrix with the same structure but non-zero values can reuse the
//! symbolic analysis.

mod chol;
mod ordering;
mod selinv;

pub use chol::{CholeskyOptions, SpdFactor, SymbolicCholesky};
pub use ordering::minimum_degree;
pub use selinv::SelectedInverse;

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// A real matrix in compressed sparse column form.
///
/// Row indices are strictly increasing within each column and there are no
/// duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMat {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Builds a matrix from raw CSC arrays, validating the invariants.
    pub fn new(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != ncols + 1 {
            return Err(Error::InvalidStructure(format!(
                "col_ptr has length {} for {} columns",
                col_ptr.len(),
                ncols
            )));
        }
        if col_ptr[0] != 0 || col_ptr[ncols] != row_idx.len() || row_idx.len() != values.len() {
            return Err(Error::InvalidStructure(
                "column pointers inconsistent with index/value arrays".into(),
            ));
        }
        for j in 0..ncols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(Error::InvalidStructure(format!(
                    "column pointers decrease at column {j}"
                )));
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            for w in rows.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidStructure(format!(
                        "row indices not strictly increasing in column {j}"
                    )));
                }
            }
            if let Some(&last) = rows.last() {
                if last >= nrows {
                    return Err(Error::IndexOutOfBounds {
                        row: last,
                        col: j,
                        nrows,
                        ncols,
                    });
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Assembles a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }
        // counting sort by column, then sort rows inside each column
        let mut counts = vec![0usize; ncols + 1];
        for &(_, c, _) in triplets {
            counts[c + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[next[c]] = (r, v);
            next[c] += 1;
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        for j in 0..ncols {
            let col = &mut entries[counts[j]..counts[j + 1]];
            col.sort_by_key(|e| e.0);
            for &(r, v) in col.iter() {
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from a row-major dense array, keeping every entry
    /// (including zeros) as a structural nonzero.
    pub fn from_dense_structural(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "dense data of length {} for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(nrows * ncols);
        let mut values = Vec::with_capacity(nrows * ncols);
        col_ptr.push(0);
        for j in 0..ncols {
            for i in 0..nrows {
                row_idx.push(i);
                values.push(data[i * ncols + j]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    /// Position of entry `(i, j)` in the value array, if structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (rows, _) = self.col(j);
        rows.binary_search(&i).ok().map(|k| self.col_ptr[j] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn same_structure(&self, other: &SparseMat) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    /// Iterates over `(row, col, value)` of every structural entry.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> SparseMat {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                row_idx[next[i]] = j;
                values[next[i]] = v;
                next[i] += 1;
            }
        }
        SparseMat {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} times a {}x{} matrix",
                x.len(),
                self.nrows,
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        Ok(y)
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "transpose product with vector of length {} for a {}x{} matrix",
                x.len(),
                self.nrows,
                self.ncols
            )));
        }
        Ok((0..self.ncols)
            .map(|j| {
                let (rows, vals) = self.col(j);
                rows.iter().zip(vals).map(|(&i, &v)| v * x[i]).sum()
            })
            .collect())
    }

    /// Structural sparse product `A B`; the result structure is the union of
    /// all structural products, zeros included.
    pub fn matmul(&self, other: &SparseMat) -> Result<SparseMat> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut mark = vec![usize::MAX; self.nrows];
        let mut acc = vec![0.0; self.nrows];
        let mut col_ptr = Vec::with_capacity(other.ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let mut pattern = Vec::new();
        for j in 0..other.ncols {
            pattern.clear();
            let (brows, bvals) = other.col(j);
            for (&k, &bkj) in brows.iter().zip(bvals) {
                let (arows, avals) = self.col(k);
                for (&i, &aik) in arows.iter().zip(avals) {
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = 0.0;
                        pattern.push(i);
                    }
                    acc[i] += aik * bkj;
                }
            }
            pattern.sort_unstable();
            for &i in &pattern {
                row_idx.push(i);
                values.push(acc[i]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMat {
            nrows: self.nrows,
            ncols: other.ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// `alpha A + beta B` on the union structure.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMat, beta: f64) -> Result<SparseMat> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch(format!(
                "adding {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        col_ptr.push(0);
        for j in 0..self.ncols {
            let (ar, av) = self.col(j);
            let (br, bv) = other.col(j);
            let (mut p, mut q) = (0, 0);
            while p < ar.len() || q < br.len() {
                if q == br.len() || (p < ar.len() && ar[p] < br[q]) {
                    row_idx.push(ar[p]);
                    values.push(alpha * av[p]);
                    p += 1;
                } else if p == ar.len() || br[q] < ar[p] {
                    row_idx.push(br[q]);
                    values.push(beta * bv[q]);
                    q += 1;
                } else {
                    row_idx.push(ar[p]);
                    values.push(alpha * av[p] + beta * bv[q]);
                    p += 1;
                    q += 1;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMat {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// `diag(d) A`.
    pub fn scale_rows(&self, d: &[f64]) -> Result<SparseMat> {
        if d.len() != self.nrows {
            return Err(Error::DimensionMismatch("row scaling length".into()));
        }
        let mut out = self.clone();
        for (p, v) in out.values.iter_mut().enumerate() {
            *v *= d[self.row_idx[p]];
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> SparseMat {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Entries of the main diagonal.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        self.iter().all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    /// Kronecker product `A ⊗ B`, structural.
    pub fn kron(&self, other: &SparseMat) -> SparseMat {
        let (p, q) = (other.nrows, other.ncols);
        let mut col_ptr = Vec::with_capacity(self.ncols * q + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() * other.nnz());
        let mut values = Vec::with_capacity(self.nnz() * other.nnz());
        col_ptr.push(0);
        for ja in 0..self.ncols {
            let (arows, avals) = self.col(ja);
            for jb in 0..q {
                let (brows, bvals) = other.col(jb);
                for (&ia, &a) in arows.iter().zip(avals) {
                    for (&ib, &b) in brows.iter().zip(bvals) {
                        row_idx.push(ia * p + ib);
                        values.push(a * b);
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        SparseMat {
            nrows: self.nrows * p,
            ncols: self.ncols * q,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Block-diagonal composition `diag(B_1, …, B_k)`.
    pub fn block_diag(blocks: &[&SparseMat]) -> SparseMat {
        let nrows = blocks.iter().map(|b| b.nrows).sum();
        let ncols = blocks.iter().map(|b| b.ncols).sum();
        let nnz = blocks.iter().map(|b| b.nnz()).sum();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        let mut roff = 0;
        for b in blocks {
            for j in 0..b.ncols {
                let (rows, vals) = b.col(j);
                row_idx.extend(rows.iter().map(|&i| i + roff));
                values.extend_from_slice(vals);
                col_ptr.push(row_idx.len());
            }
            roff += b.nrows;
        }
        SparseMat {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Assembles a 2×2 block matrix `[[A, B], [C, D]]` from four equally shaped blocks.
    pub fn block2(a: &SparseMat, b: &SparseMat, c: &SparseMat, d: &SparseMat) -> Result<SparseMat> {
        let (n, m) = (a.nrows, a.ncols);
        for blk in [b, c, d] {
            if blk.nrows != n || blk.ncols != m {
                return Err(Error::DimensionMismatch("2x2 block assembly".into()));
            }
        }
        let mut col_ptr = Vec::with_capacity(2 * m + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (top, bottom) in [(a, c), (b, d)] {
            for j in 0..m {
                let (r, v) = top.col(j);
                row_idx.extend_from_slice(r);
                values.extend_from_slice(v);
                let (r, v) = bottom.col(j);
                row_idx.extend(r.iter().map(|&i| i + n));
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
        }
        Ok(SparseMat {
            nrows: 2 * n,
            ncols: 2 * m,
            col_ptr,
            row_idx,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMat::from_triplets(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn empty_triplets_give_zero_matrix() {
        let m = SparseMat::from_triplets(2, 2, &[]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.to_dense(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn off_diagonal_pair_is_symmetric() {
        let m = SparseMat::from_triplets(2, 2, &[(0, 1, 5.0), (1, 0, 5.0)]).unwrap();
        assert!(m.is_symmetric(0.0));
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.get(0, 1), 5.0);
    }

    #[test]
    fn out_of_bounds_triplet_is_rejected() {
        let err = SparseMat::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfBounds { row: 2, col: 0, .. }));
    }

    #[test]
    fn new_rejects_unsorted_rows() {
        let err = SparseMat::new(3, 1, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidStructure(_)));
    }

    #[test]
    fn identity_kron_is_block_diag() {
        let l = SparseMat::from_triplets(2, 2, &[(0, 0, 2.0), (1, 0, -1.0), (0, 1, -1.0), (1, 1, 3.0)]).unwrap();
        let k = SparseMat::identity(2).kron(&l);
        assert_eq!(k.to_dense(), SparseMat::block_diag(&[&l, &l]).to_dense());
    }

    #[test]
    fn swap_kron_identity_is_block_swap() {
        let swap = SparseMat::from_dense_structural(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let k = swap.kron(&SparseMat::identity(2)).to_dense();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[0., 0., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 1., 0., 0.],
        );
        assert_eq!(k, expected);
    }

    #[test]
    fn block2_matches_dense_layout() {
        let a = SparseMat::from_diag(&[1.0, 2.0]);
        let b = SparseMat::from_diag(&[3.0, 4.0]);
        let m = SparseMat::block2(&a, &b, &b, &a).unwrap().to_dense();
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(3, 1)], 4.0);
        assert_eq!(m[(3, 3)], 2.0);
    }

    #[test]
    fn transpose_and_products_agree_with_dense() {
        let a = SparseMat::from_triplets(3, 2, &[(0, 0, 1.0), (2, 0, -2.0), (1, 1, 4.0), (2, 1, 0.5)]).unwrap();
        let b = SparseMat::from_triplets(2, 3, &[(0, 0, 3.0), (1, 2, -1.0), (0, 1, 2.0)]).unwrap();
        let ab = a.matmul(&b).unwrap().to_dense();
        assert_eq!(ab, a.to_dense() * b.to_dense());
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
        let x = [1.0, -1.0];
        let y = a.mul_vec(&x).unwrap();
        assert_eq!(y, vec![1.0, -4.0, -2.5]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0, 1.0]).unwrap(), vec![-1.0, 4.5]);
    }

    #[test]
    fn structural_zeros_survive_products() {
        let d = SparseMat::from_dense_structural(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = d.kron(&SparseMat::identity(3));
        assert_eq!(k.nnz(), 12);
        let kk = k.transpose().matmul(&k).unwrap();
        assert_eq!(kk.nnz(), 12);
    }
}
