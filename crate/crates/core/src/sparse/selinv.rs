use super::{SparseMat, SpdFactor};
use crate::error::{Error, Result};

/// Entries of `Q⁻¹` on the symmetric pattern of the Cholesky factor
/// (Takahashi recursion).
///
/// Every structural entry of `Q` lies in this pattern, so traces of the form
/// `tr(M Q⁻¹)` with `M` structurally inside `Q` are exact.
#[derive(Clone, Debug)]
pub struct SelectedInverse {
    pinv: Vec<usize>,
    perm: Vec<usize>,
    /// Lower triangle of the permuted inverse on the pattern of `L`.
    z: SparseMat,
}

impl SelectedInverse {
    pub fn new(f: &SpdFactor) -> Self {
        let l = f.l();
        let n = l.ncols();
        let lp = l.col_ptr();
        let li = l.row_idx();
        let lx = l.values();
        let mut zx = vec![0.0; lx.len()];
        // slot of each row within the current column, usize::MAX if absent
        let mut slot = vec![usize::MAX; n];
        let mut acc = Vec::new();
        for j in (0..n).rev() {
            let ljj = lx[lp[j]];
            let (lo, hi) = (lp[j] + 1, lp[j + 1]);
            for p in lo..hi {
                slot[li[p]] = p - lo;
            }
            acc.clear();
            acc.resize(hi - lo, 0.0);
            // acc_r = Σ_k L_kj Z_rk over the column pattern; column k of Z
            // (rows ≥ k) covers r ≥ k, the mirrored term covers r < k
            for p in lo..hi {
                let k = li[p];
                let lk = lx[p];
                let zk = zx[lp[k]];
                acc[p - lo] += lk * zk;
                for q in lp[k] + 1..lp[k + 1] {
                    let s = slot[li[q]];
                    if s != usize::MAX {
                        let z = zx[q];
                        acc[s] += lk * z;
                        acc[p - lo] += lx[lo + s] * z;
                    }
                }
            }
            for p in lo..hi {
                zx[p] = -acc[p - lo] / ljj;
                slot[li[p]] = usize::MAX;
            }
            let mut s = 0.0;
            for p in lo..hi {
                s += lx[p] * zx[p];
            }
            zx[lp[j]] = 1.0 / (ljj * ljj) - s / ljj;
        }
        let z = SparseMat::new(n, n, lp.to_vec(), li.to_vec(), zx).expect("same pattern as L");
        Self {
            pinv: f.pinv().to_vec(),
            perm: f.permutation().to_vec(),
            z,
        }
    }

    /// `(Q⁻¹)_ij` if `(i, j)` lies in the computed pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.pinv[i], self.pinv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        self.z.position(r, c).map(|p| self.z.values()[p])
    }

    /// Diagonal of `Q⁻¹` in the original ordering.
    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.perm.len()];
        for (k, &p) in self.perm.iter().enumerate() {
            d[p] = self.z.values()[self.z.col_ptr()[k]];
        }
        d
    }

    /// `tr(M Q⁻¹) = Σ_ij M_ij (Q⁻¹)_ji` for `M` structurally inside the pattern.
    pub fn trace_product(&self, m: &SparseMat) -> Result<f64> {
        let mut s = 0.0;
        for (i, j, v) in m.iter() {
            if v == 0.0 {
                continue;
            }
            match self.get(j, i) {
                Some(z) => s += v * z,
                None => {
                    return Err(Error::InvalidStructure(format!(
                        "entry ({i}, {j}) lies outside the selected-inverse pattern"
                    )))
                }
            }
        }
        Ok(s)
    }
}
