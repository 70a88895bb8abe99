//! Conditional (posterior) machinery shared by the Gaussian and NIG estimators:
//! per-replicate sufficient statistics, the conditional precision
//! `Q̃ = Kᵀ H⁻¹ K + Aᵀ Q_ε A`, its mean, and the complete-data score averaged
//! over `w | Y`.
//!
//! A co-located pair shares one projector row, so every product involving
//! `A` and `Q_ε` reduces to a handful of mesh-sized statistics computed once.

use crate::error::{Error, Result};
use crate::mesh_fem::{projector, TriMesh};
use crate::model::{LatentOperator, OperatorDerivative};
use crate::noise::{NuggetLayout, NuggetParams, PairPrecision};
use crate::obs::Replicate;
use crate::params::ParamId;
use crate::sparse::{CholeskyOptions, SelectedInverse, SparseMat, SpdFactor, SymbolicCholesky};
use nalgebra::{DMatrix, DVector};
use std::sync::{Arc, OnceLock};

/// Mesh-sized summaries of one replicate.
#[derive(Debug)]
pub struct ReplicateSystem {
    pub id: i64,
    pub n: usize,
    pub layout: NuggetLayout,
    /// `diag(A₁, A₂)`, observations stacked field 1 first.
    pub a: SparseMat,
    /// Response columns `[y | B]`, one row per stacked observation.
    pub r: DMatrix<f64>,
    sp: SparseMat,
    s1u: SparseMat,
    s2u: SparseMat,
    tp1: DMatrix<f64>,
    tp2: DMatrix<f64>,
    tu1: DMatrix<f64>,
    tu2: DMatrix<f64>,
    g11: DMatrix<f64>,
    g12: DMatrix<f64>,
    g22: DMatrix<f64>,
    gu1: DMatrix<f64>,
    gu2: DMatrix<f64>,
    symbolic: OnceLock<Arc<SymbolicCholesky>>,
}

fn outer_add(t: &mut Vec<(usize, usize, f64)>, row: &[(usize, f64)]) {
    for &(i, a) in row {
        for &(j, b) in row {
            t.push((i, j, a * b));
        }
    }
}

fn sparse_rows(a: &SparseMat) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); a.nrows()];
    for (i, j, v) in a.iter() {
        rows[i].push((j, v));
    }
    rows
}

impl ReplicateSystem {
    /// Builds the statistics for one replicate.
    ///
    /// `n_cov` covariate columns per field enter the mean as `B β` with a
    /// separate coefficient block per field.
    pub fn new(mesh: &TriMesh, rep: &Replicate, n_cov: usize) -> Result<Self> {
        let n = mesh.n_vertices();
        let f1 = &rep.fields[0];
        let f2 = &rep.fields[1];
        let (n1, n2) = (f1.len(), f2.len());
        let a1 = projector(mesh, &f1.locs)?;
        let a2 = projector(mesh, &f2.locs)?;
        let a = SparseMat::block_diag(&[&a1, &a2]);
        let layout = NuggetLayout::from_locations(&f1.locs, &f2.locs);
        let ncols = 1 + 2 * n_cov;
        let mut r = DMatrix::zeros(n1 + n2, ncols);
        for (f, data) in rep.fields.iter().enumerate() {
            let off = if f == 0 { 0 } else { n1 };
            for i in 0..data.len() {
                r[(off + i, 0)] = data.values[i];
                let cov = data.covariates.get(i).map(Vec::as_slice).unwrap_or(&[]);
                if n_cov > 0 && cov.len() != n_cov {
                    return Err(Error::DimensionMismatch(format!(
                        "observation {i} of field {} has {} covariates, expected {n_cov}",
                        f + 1,
                        cov.len()
                    )));
                }
                for (c, &v) in cov.iter().enumerate() {
                    r[(off + i, 1 + f * n_cov + c)] = v;
                }
            }
        }
        let rows1 = sparse_rows(&a1);
        let rows2 = sparse_rows(&a2);
        let (mut tsp, mut ts1, mut ts2) = (Vec::new(), Vec::new(), Vec::new());
        let mut tp1 = DMatrix::zeros(n, ncols);
        let mut tp2 = DMatrix::zeros(n, ncols);
        let mut tu1 = DMatrix::zeros(n, ncols);
        let mut tu2 = DMatrix::zeros(n, ncols);
        let mut g11 = DMatrix::zeros(ncols, ncols);
        let mut g12 = DMatrix::zeros(ncols, ncols);
        let mut g22 = DMatrix::zeros(ncols, ncols);
        let mut gu1 = DMatrix::zeros(ncols, ncols);
        let mut gu2 = DMatrix::zeros(ncols, ncols);
        for i in 0..layout.len() {
            let ri = r.row(i).transpose();
            match (layout.field_of(i), layout.pair_index[i]) {
                (0, Some(j)) => {
                    // the pair shares the field-1 projector row
                    let row = &rows1[i];
                    outer_add(&mut tsp, row);
                    let rj = r.row(j).transpose();
                    for &(k, w) in row {
                        for c in 0..ncols {
                            tp1[(k, c)] += w * ri[c];
                            tp2[(k, c)] += w * rj[c];
                        }
                    }
                    g11 += &ri * ri.transpose();
                    g12 += &ri * rj.transpose();
                    g22 += &rj * rj.transpose();
                }
                (1, Some(_)) => {}
                (0, None) => {
                    let row = &rows1[i];
                    outer_add(&mut ts1, row);
                    for &(k, w) in row {
                        for c in 0..ncols {
                            tu1[(k, c)] += w * ri[c];
                        }
                    }
                    gu1 += &ri * ri.transpose();
                }
                _ => {
                    let row = &rows2[i - n1];
                    outer_add(&mut ts2, row);
                    for &(k, w) in row {
                        for c in 0..ncols {
                            tu2[(k, c)] += w * ri[c];
                        }
                    }
                    gu2 += &ri * ri.transpose();
                }
            }
        }
        // common structure for the three Gram matrices, zeros kept explicitly
        let zeros: Vec<(usize, usize, f64)> = tsp
            .iter()
            .chain(&ts1)
            .chain(&ts2)
            .map(|&(i, j, _)| (i, j, 0.0))
            .chain((0..n).map(|i| (i, i, 0.0)))
            .collect();
        let build = |t: &[(usize, usize, f64)]| -> Result<SparseMat> {
            let mut all = zeros.clone();
            all.extend_from_slice(t);
            SparseMat::from_triplets(n, n, &all)
        };
        Ok(Self {
            id: rep.id,
            n,
            layout,
            a,
            r,
            sp: build(&tsp)?,
            s1u: build(&ts1)?,
            s2u: build(&ts2)?,
            tp1,
            tp2,
            tu1,
            tu2,
            g11,
            g12,
            g22,
            gu1,
            gu2,
            symbolic: OnceLock::new(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.layout.len()
    }

    pub fn n_resp(&self) -> usize {
        self.r.ncols()
    }

    /// `Aᵀ Q_ε A` for the given precision entries.
    pub fn ate_a(&self, p: &PairPrecision) -> Result<SparseMat> {
        let b11 = self.sp.add_scaled(p.p11, &self.s1u, p.u1)?;
        let b22 = self.sp.add_scaled(p.p22, &self.s2u, p.u2)?;
        let b12 = self.sp.scale(p.p12);
        SparseMat::block2(&b11, &b12, &b12, &b22)
    }

    /// `Aᵀ Q_ε R` (`2n × r`).
    pub fn ate_r(&self, p: &PairPrecision) -> DMatrix<f64> {
        let top = &self.tp1 * p.p11 + &self.tp2 * p.p12 + &self.tu1 * p.u1;
        let bottom = &self.tp1 * p.p12 + &self.tp2 * p.p22 + &self.tu2 * p.u2;
        let mut out = DMatrix::zeros(2 * self.n, self.n_resp());
        out.rows_mut(0, self.n).copy_from(&top);
        out.rows_mut(self.n, self.n).copy_from(&bottom);
        out
    }

    /// `Rᵀ Q_ε R` (`r × r`).
    pub fn rte_r(&self, p: &PairPrecision) -> DMatrix<f64> {
        &self.g11 * p.p11 + (&self.g12 + self.g12.transpose()) * p.p12 + &self.g22 * p.p22 + &self.gu1 * p.u1
            + &self.gu2 * p.u2
    }

    /// Factors `Q̃`, reusing the symbolic analysis across calls.
    pub fn factor(&self, qt: &SparseMat) -> Result<SpdFactor> {
        let sym = match self.symbolic.get() {
            Some(s) => Arc::clone(s),
            None => {
                let s = SymbolicCholesky::analyse(qt, CholeskyOptions::default())?;
                let _ = self.symbolic.set(Arc::clone(&s));
                s
            }
        };
        match sym.factor(qt) {
            Err(Error::InvalidStructure(_)) => SpdFactor::new(qt),
            other => other,
        }
    }

    /// `log |Q_ε|` of this replicate's layout.
    pub fn nugget_logdet(&self, nugget: &NuggetParams) -> f64 {
        crate::noise::nugget_logdet(nugget, &self.layout)
    }
}

/// `Kᵀ diag(H)⁻¹ K`.
pub fn latent_precision(op: &LatentOperator, hdiag: &[f64]) -> Result<SparseMat> {
    let inv: Vec<f64> = hdiag.iter().map(|h| 1.0 / h).collect();
    op.k.transpose().matmul(&op.k.scale_rows(&inv)?)
}

/// The conditional law `w | Y` (Gaussian case, or NIG given `v`).
pub struct Conditional {
    pub qtilde: SparseMat,
    pub factor: SpdFactor,
    /// `Q̃⁻¹ Aᵀ Q_ε R`, one column per response column.
    pub x: DMatrix<f64>,
    /// `Q̃⁻¹ Kᵀ H⁻¹ m` when a latent mean is present.
    pub x_mean: Option<Vec<f64>>,
    pub atqr: DMatrix<f64>,
    pub rtqr: DMatrix<f64>,
}

impl Conditional {
    /// `H` is the latent variance vector (`h2` for Gaussian fields, `v` for NIG)
    /// and `m` an optional latent mean (`μ (v − h)` for NIG).
    pub fn new(
        sys: &ReplicateSystem,
        op: &LatentOperator,
        nugget: &NuggetParams,
        hdiag: &[f64],
        m: Option<&[f64]>,
    ) -> Result<Self> {
        let pp = nugget.pair_precision();
        let qx = latent_precision(op, hdiag)?;
        let qtilde = qx.add_scaled(1.0, &sys.ate_a(&pp)?, 1.0)?;
        let factor = sys.factor(&qtilde)?;
        let atqr = sys.ate_r(&pp);
        let x = factor.solve_columns(&atqr)?;
        let x_mean = match m {
            Some(m) => {
                let hm: Vec<f64> = m.iter().zip(hdiag).map(|(a, h)| a / h).collect();
                Some(factor.solve(&op.k.tr_mul_vec(&hm)?)?)
            }
            None => None,
        };
        Ok(Self {
            qtilde,
            factor,
            x,
            x_mean,
            atqr,
            rtqr: sys.rte_r(&pp),
        })
    }

    /// Conditional mean `ξ` for response coefficients `c` (`[1, −β]`).
    pub fn mean(&self, c: &DVector<f64>) -> Vec<f64> {
        let mut xi: Vec<f64> = (&self.x * c).iter().copied().collect();
        if let Some(xm) = &self.x_mean {
            xi.iter_mut().zip(xm).for_each(|(a, b)| *a += b);
        }
        xi
    }

    /// `Rᵀ Σ_Y⁻¹ R` for a zero latent mean.
    pub fn schur(&self) -> DMatrix<f64> {
        &self.rtqr - self.atqr.transpose() * &self.x
    }
}

/// Complete-data score averaged over `w | Y`, indexed by [`ParamId`]. The `η`
/// entries are left at zero; they depend on the mixing variables only.
#[allow(clippy::too_many_arguments)]
pub fn conditional_score(
    sys: &ReplicateSystem,
    op: &LatentOperator,
    fb: &[SpdFactor; 2],
    nugget: &NuggetParams,
    hdiag: &[f64],
    mean: Option<(&[f64], [&[f64]; 2])>,
    cond: &Conditional,
    coef: &DVector<f64>,
    with_theta: bool,
) -> Result<([f64; 13], Vec<f64>)> {
    let n = op.n;
    let xi = cond.mean(coef);
    let sel = SelectedInverse::new(&cond.factor);
    let kxi = op.k.mul_vec(&xi)?;
    let inv_h: Vec<f64> = hdiag.iter().map(|h| 1.0 / h).collect();
    let resid_h: Vec<f64> = (0..2 * n)
        .map(|i| (kxi[i] - mean.map_or(0.0, |(m, _)| m[i])) * inv_h[i])
        .collect();
    let kt = op.k.transpose();
    let mut g = [0.0; 13];
    let mut derivs = vec![
        (ParamId::Kappa1, OperatorDerivative::LogKappa(0)),
        (ParamId::Kappa2, OperatorDerivative::LogKappa(1)),
        (ParamId::Sigma1, OperatorDerivative::LogSigma(0)),
        (ParamId::Sigma2, OperatorDerivative::LogSigma(1)),
        (ParamId::Rho, OperatorDerivative::Rho),
    ];
    if with_theta {
        derivs.push((ParamId::Theta, OperatorDerivative::Theta));
    }
    for (id, which) in derivs {
        let dk = op.dk(which)?;
        let dkxi = dk.mul_vec(&xi)?;
        let quad: f64 = resid_h.iter().zip(&dkxi).map(|(a, b)| a * b).sum();
        let m = kt.matmul(&dk.scale_rows(&inv_h)?)?;
        let tr = sel.trace_product(&m)?;
        g[id.index()] = op.trace_kinv_dk(which, fb)? - quad - tr;
    }
    if let Some((_, dm)) = mean {
        for (k, id) in [ParamId::Mu1, ParamId::Mu2].into_iter().enumerate() {
            g[id.index()] = resid_h.iter().zip(dm[k]).map(|(a, b)| a * b).sum();
        }
    }

    // nugget parameters
    let pd = nugget.pair_precision_derivatives();
    let layout = &sys.layout;
    let m_pairs = layout.n_pairs() as f64;
    let dlogdet = [
        -2.0 * layout.n1 as f64,
        -2.0 * layout.n2 as f64,
        m_pairs * nugget.effective_rho(),
    ];
    let xiv = DVector::from_vec(xi.clone());
    for (k, id) in [ParamId::SigmaE1, ParamId::SigmaE2, ParamId::RhoE].into_iter().enumerate() {
        let d = &pd[k];
        let rr = sys.rte_r(d);
        let ar = sys.ate_r(d);
        let aa = sys.ate_a(d)?;
        let yqy = (coef.transpose() * &rr * coef)[(0, 0)];
        let cross = (xiv.transpose() * (&ar * coef))[(0, 0)];
        let aaxi = aa.mul_vec(&xi)?;
        let xqx: f64 = xi.iter().zip(&aaxi).map(|(a, b)| a * b).sum();
        let tr = sel.trace_product(&aa)?;
        g[id.index()] = 0.5 * dlogdet[k] - 0.5 * (yqy - 2.0 * cross + xqx + tr);
    }
    Ok((g, xi))
}

/// Mean and variance of `A₀ w_k` at `locs` for field `k`, given the
/// conditional mean and the selected inverse of the conditional precision.
pub fn projected_moments(
    mesh: &TriMesh,
    locs: &[[f64; 2]],
    field: usize,
    xi: &[f64],
    sel: &SelectedInverse,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = mesh.n_vertices();
    let a0 = projector(mesh, locs)?;
    let rows = sparse_rows(&a0);
    let off = field * n;
    let mut mean = Vec::with_capacity(locs.len());
    let mut var = Vec::with_capacity(locs.len());
    for row in &rows {
        mean.push(row.iter().map(|&(j, w)| w * xi[off + j]).sum());
        let mut v = 0.0;
        for &(i, a) in row {
            for &(j, b) in row {
                let z = sel.get(off + i, off + j).ok_or_else(|| {
                    Error::InvalidStructure(format!("entry ({i}, {j}) missing from the selected inverse"))
                })?;
                v += a * b * z;
            }
        }
        var.push(v);
    }
    Ok((mean, var))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh_fem::{assemble_fem, make_rect_mesh};
    use crate::model::{build_operator, BivModelParams};
    use crate::noise::{nugget_precision, NuggetStructure};
    use crate::obs::FieldData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random replicate with a mix of paired and unpaired sites.
    pub(crate) fn random_replicate(mesh: &TriMesh, n1: usize, n2: usize, shared: usize, seed: u64) -> Replicate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, x1, y0, y1) = mesh.bbox();
        let mut pt = || [x0 + (x1 - x0) * rng.random::<f64>(), y0 + (y1 - y0) * rng.random::<f64>()];
        let sharedlocs: Vec<[f64; 2]> = (0..shared).map(|_| pt()).collect();
        let mut fields: [FieldData; 2] = Default::default();
        for (f, count) in [n1, n2].into_iter().enumerate() {
            for i in 0..count {
                let loc = if i < shared { sharedlocs[i] } else { pt() };
                fields[f].push(loc, 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for f in fields.iter_mut() {
            for v in f.values.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        Replicate { id: 0, fields }
    }

    #[test]
    fn sufficient_statistics_match_dense_products() {
        let mesh = make_rect_mesh((0.0, 1.0), (0.0, 2.0), 4, 5).unwrap();
        let rep = random_replicate(&mesh, 9, 7, 5, 3);
        let sys = ReplicateSystem::new(&mesh, &rep, 0).unwrap();
        let nug = NuggetParams::new(0.6, 1.4, -0.55, NuggetStructure::General);
        let qe = nugget_precision(&nug, &sys.layout).unwrap().to_dense();
        let a = sys.a.to_dense();
        let y = DVector::from_vec(rep.stacked_values());
        let pp = nug.pair_precision();
        assert!((sys.ate_a(&pp).unwrap().to_dense() - a.transpose() * &qe * &a).amax() < 1e-12);
        let atqy = a.transpose() * &qe * &y;
        assert!((sys.ate_r(&pp).column(0) - atqy).amax() < 1e-12);
        assert!((sys.rte_r(&pp)[(0, 0)] - (y.transpose() * &qe * &y)[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn structure_is_parameter_independent() {
        let mesh = make_rect_mesh((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let rep = random_replicate(&mesh, 6, 6, 6, 1);
        let sys = ReplicateSystem::new(&mesh, &rep, 0).unwrap();
        let op0 = build_operator(&BivModelParams::gaussian(2.0, 2.0, 1.0, 1.0, 0.0), &fem).unwrap();
        let op1 = build_operator(&BivModelParams::gaussian(3.0, 1.0, 0.5, 2.0, 0.4), &fem).unwrap();
        let c0 = Conditional::new(&sys, &op0, &NuggetParams::diagonal(1.0, 1.0), &op0.h2, None).unwrap();
        let c1 = Conditional::new(
            &sys,
            &op1,
            &NuggetParams::new(0.3, 0.2, 0.5, NuggetStructure::General),
            &op1.h2,
            None,
        )
        .unwrap();
        assert!(c0.qtilde.same_structure(&c1.qtilde));
    }
}
