use super::ordering::{invert, minimum_degree};
use super::SparseMat;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// Options for the SPD factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CholeskyOptions {
    /// Skip the fill-reducing ordering and factor in the natural order.
    pub natural_order: bool,
}

/// Structure-only analysis of an SPD matrix: ordering, elimination tree and
/// the pattern of the Cholesky factor.
///
/// The analysis is reusable for any matrix with exactly the same structure.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// Structure of the analysed matrix; numeric factorization checks against it.
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    /// Upper triangle of `P A Pᵀ` by columns, as positions into `A.values()`.
    c_ptr: Vec<usize>,
    c_row: Vec<usize>,
    c_src: Vec<usize>,
    /// Column pointers of `L`.
    l_ptr: Vec<usize>,
    /// Row patterns of `L` (strictly below the diagonal, columns `< k`), by row.
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyse(a: &SparseMat, opts: CholeskyOptions) -> Result<Arc<Self>> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cannot factor a non-square {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let perm = if opts.natural_order {
            (0..n).collect()
        } else {
            minimum_degree(a)
        };
        let pinv = invert(&perm);

        // C = upper triangle of P A Pᵀ
        let mut counts = vec![0usize; n + 1];
        for (i, j, _) in a.iter() {
            let (pi, pj) = (pinv[i], pinv[j]);
            if pi <= pj {
                counts[pj + 1] += 1;
            }
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let c_ptr = counts.clone();
        let mut next = counts;
        let mut c_row = vec![0; c_ptr[n]];
        let mut c_src = vec![0; c_ptr[n]];
        for (pos, (i, j, _)) in a.iter().enumerate() {
            let (pi, pj) = (pinv[i], pinv[j]);
            if pi <= pj {
                c_row[next[pj]] = pi;
                c_src[next[pj]] = pos;
                next[pj] += 1;
            }
        }

        // elimination tree of C
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &i0 in &c_row[c_ptr[k]..c_ptr[k + 1]] {
                let mut i = i0;
                while i != usize::MAX && i < k {
                    let inext = ancestor[i];
                    ancestor[i] = k;
                    if inext == usize::MAX {
                        parent[i] = k;
                    }
                    i = inext;
                }
            }
        }

        // row patterns via ereach
        let mut mark = vec![usize::MAX; n];
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_cols = Vec::new();
        let mut col_counts = vec![1usize; n];
        let mut stack = Vec::new();
        row_ptr.push(0);
        for k in 0..n {
            mark[k] = k;
            let start = row_cols.len();
            for &i0 in &c_row[c_ptr[k]..c_ptr[k + 1]] {
                if i0 > k {
                    continue;
                }
                let mut i = i0;
                stack.clear();
                while mark[i] != k {
                    stack.push(i);
                    mark[i] = k;
                    i = parent[i];
                }
                // ancestors are visited in increasing order along each path
                row_cols.extend(stack.iter().rev());
            }
            // topological order: columns in the row pattern must be processed
            // so that every descendant precedes its ancestor; sorting ascending
            // satisfies this since parent[j] > j
            row_cols[start..].sort_unstable();
            for &j in &row_cols[start..] {
                col_counts[j] += 1;
            }
            row_ptr.push(row_cols.len());
        }
        let mut l_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        for k in 0..n {
            l_ptr.push(l_ptr[k] + col_counts[k]);
        }

        Ok(Arc::new(Self {
            n,
            a_col_ptr: a.col_ptr().to_vec(),
            a_row_idx: a.row_idx().to_vec(),
            perm,
            pinv,
            c_ptr,
            c_row,
            c_src,
            l_ptr,
            row_ptr,
            row_cols,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.l_ptr[self.n]
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    fn matches(&self, a: &SparseMat) -> bool {
        a.nrows() == self.n
            && a.ncols() == self.n
            && a.col_ptr() == self.a_col_ptr.as_slice()
            && a.row_idx() == self.a_row_idx.as_slice()
    }

    /// Numeric factorization of a matrix with the analysed structure.
    pub fn factor(self: &Arc<Self>, a: &SparseMat) -> Result<SpdFactor> {
        if !self.matches(a) {
            return Err(Error::InvalidStructure(
                "matrix structure differs from the symbolic analysis".into(),
            ));
        }
        let n = self.n;
        let av = a.values();
        let nnz = self.nnz_l();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut fill: Vec<usize> = self.l_ptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        for k in 0..n {
            for p in self.c_ptr[k]..self.c_ptr[k + 1] {
                x[self.c_row[p]] += av[self.c_src[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &self.row_cols[self.row_ptr[k]..self.row_ptr[k + 1]] {
                let lkj = x[j] / lx[self.l_ptr[j]];
                x[j] = 0.0;
                for p in self.l_ptr[j] + 1..fill[j] {
                    x[li[p]] -= lx[p] * lkj;
                }
                d -= lkj * lkj;
                let p = fill[j];
                fill[j] += 1;
                li[p] = k;
                lx[p] = lkj;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[k],
                });
            }
            let p = fill[k];
            fill[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        let l = SparseMat::new(n, n, self.l_ptr.clone(), li, lx)?;
        let logdet = 2.0 * (0..n).map(|j| l.values()[self.l_ptr[j]].ln()).sum::<f64>();
        Ok(SpdFactor {
            symbolic: Arc::clone(self),
            l,
            logdet,
        })
    }
}

/// Sparse Cholesky factor `P Q Pᵀ = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    symbolic: Arc<SymbolicCholesky>,
    l: SparseMat,
    logdet: f64,
}

impl SpdFactor {
    /// Analyse and factor in one call.
    pub fn new(q: &SparseMat) -> Result<Self> {
        SymbolicCholesky::analyse(q, CholeskyOptions::default())?.factor(q)
    }

    pub fn with_options(q: &SparseMat, opts: CholeskyOptions) -> Result<Self> {
        SymbolicCholesky::analyse(q, opts)?.factor(q)
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// `perm[k]` is the original index placed at position `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub(crate) fn pinv(&self) -> &[usize] {
        &self.symbolic.pinv
    }

    pub fn l(&self) -> &SparseMat {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side of length {len} for a factor of order {}",
                self.n()
            )));
        }
        Ok(())
    }

    /// `L y = y` in place (permuted space).
    fn lsolve(&self, y: &mut [f64]) {
        let (lp, li, lx) = (self.l.col_ptr(), self.l.row_idx(), self.l.values());
        for j in 0..self.n() {
            y[j] /= lx[lp[j]];
            let yj = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                y[li[p]] -= lx[p] * yj;
            }
        }
    }

    /// `Lᵀ y = y` in place (permuted space).
    fn ltsolve(&self, y: &mut [f64]) {
        let (lp, li, lx) = (self.l.col_ptr(), self.l.row_idx(), self.l.values());
        for j in (0..self.n()).rev() {
            let mut s = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= lx[p] * y[li[p]];
            }
            y[j] = s / lx[lp[j]];
        }
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let perm = self.permutation();
        let mut y: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut x = vec![0.0; b.len()];
        for (k, &p) in perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    /// Solves `Q X = B` column by column for a column-major `n × m` block.
    pub fn solve_columns(&self, b: &nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut out = nalgebra::DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<f64> = b.column(j).iter().copied().collect();
            let x = self.solve(&col)?;
            out.column_mut(j).copy_from_slice(&x);
        }
        Ok(out)
    }

    /// Maps standard normal `z` to a draw from `N(0, Q⁻¹)`: `x = Pᵀ L⁻ᵀ z`.
    pub fn transform_normal(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        let mut x = vec![0.0; z.len()];
        for (k, &p) in self.permutation().iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    /// Draws from `N(0, Q⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform_normal(&z).expect("length matches by construction")
    }
}
