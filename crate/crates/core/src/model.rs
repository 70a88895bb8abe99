//! Bivariate Matérn model with `α = 2` in two dimensions: the dependence matrix,
//! the discretized operator `K`, the latent precision `Q_x`, and closed-form
//! covariance summaries.

use crate::error::{Error, Result};
use crate::mesh_fem::FemMatrices;
use crate::sparse::{SparseMat, SpdFactor};
use crate::special::bessel_k1;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Driving-noise family of the latent fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Nig,
}

/// Latent-field parameters.
///
/// `eta*` and `mu*` are only used when `kind` is [`NoiseKind::Nig`]; the
/// centering shift of the NIG law is `−mu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivModelParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default = "default_eta")]
    pub eta1: f64,
    #[serde(default = "default_eta")]
    pub eta2: f64,
    #[serde(default)]
    pub mu1: f64,
    #[serde(default)]
    pub mu2: f64,
}

fn default_eta() -> f64 {
    1.0
}

impl BivModelParams {
    pub fn gaussian(kappa1: f64, kappa2: f64, sigma1: f64, sigma2: f64, rho: f64) -> Self {
        Self {
            kappa1,
            kappa2,
            sigma1,
            sigma2,
            rho,
            theta: 0.0,
            kind: NoiseKind::Gaussian,
            eta1: 1.0,
            eta2: 1.0,
            mu1: 0.0,
            mu2: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn nig(
        kappa1: f64,
        kappa2: f64,
        sigma1: f64,
        sigma2: f64,
        rho: f64,
        theta: f64,
        eta: [f64; 2],
        mu: [f64; 2],
    ) -> Self {
        Self {
            kappa1,
            kappa2,
            sigma1,
            sigma2,
            rho,
            theta,
            kind: NoiseKind::Nig,
            eta1: eta[0],
            eta2: eta[1],
            mu1: mu[0],
            mu2: mu[1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.rho.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidParameter("rho and theta must be finite".into()));
        }
        if self.kind == NoiseKind::Nig {
            for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
                }
            }
            if !self.mu1.is_finite() || !self.mu2.is_finite() {
                return Err(Error::InvalidParameter("mu must be finite".into()));
            }
        }
        Ok(())
    }

    /// Rotation used in the operator: ignored (zero) for Gaussian noise.
    pub fn effective_theta(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => 0.0,
            NoiseKind::Nig => self.theta,
        }
    }

    pub fn kappa(&self, k: usize) -> f64 {
        [self.kappa1, self.kappa2][k]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        [self.sigma1, self.sigma2][k]
    }

    pub fn eta(&self, k: usize) -> f64 {
        [self.eta1, self.eta2][k]
    }

    pub fn mu(&self, k: usize) -> f64 {
        [self.mu1, self.mu2][k]
    }
}

/// `D(θ, ρ)`, row-major.
pub fn dep_matrix(theta: f64, rho: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let r = (1.0 + rho * rho).sqrt();
    [[c + rho * s, -s * r], [s - rho * c, c * r]]
}

/// `∂D/∂ρ`.
pub fn dep_matrix_drho(theta: f64, rho: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let q = rho / (1.0 + rho * rho).sqrt();
    [[s, -s * q], [-c, c * q]]
}

/// `∂D/∂θ`.
pub fn dep_matrix_dtheta(theta: f64, rho: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let r = (1.0 + rho * rho).sqrt();
    [[-s + rho * c, -c * r], [c + rho * s, -s * r]]
}

/// Normalizing constant `c = 1 / (2 √π σ κ)` that gives marginal variance `σ²`.
pub fn norm_const(kappa: f64, sigma: f64) -> f64 {
    1.0 / (2.0 * PI.sqrt() * sigma * kappa)
}

/// Partial derivative of `K` with respect to one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorDerivative {
    LogKappa(usize),
    LogSigma(usize),
    Rho,
    Theta,
}

/// The discretized bivariate operator and the derived latent precision.
#[derive(Clone, Debug)]
pub struct LatentOperator {
    pub n: usize,
    pub d: [[f64; 2]; 2],
    pub c: [f64; 2],
    pub kappa: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
    pub theta: f64,
    /// `L_k = c_k (G + κ_k² C)`.
    pub l: [SparseMat; 2],
    /// `G + κ_k² C` without the constant.
    pub b: [SparseMat; 2],
    /// `K = (D ⊗ Iₙ) diag(L₁, L₂)`; all four blocks are structurally present.
    pub k: SparseMat,
    /// `Q_x = Kᵀ diag(h2)⁻¹ K`.
    pub qx: SparseMat,
    /// `(h, h)`.
    pub h2: Vec<f64>,
    fem_c: SparseMat,
    fem_g: SparseMat,
}

fn block_k(d: &[[f64; 2]; 2], l1: &SparseMat, l2: &SparseMat) -> Result<SparseMat> {
    SparseMat::block2(&l1.scale(d[0][0]), &l2.scale(d[0][1]), &l1.scale(d[1][0]), &l2.scale(d[1][1]))
}

/// Assembles `K` and `Q_x` from parameters and finite-element matrices.
pub fn build_operator(params: &BivModelParams, fem: &FemMatrices) -> Result<LatentOperator> {
    params.validate()?;
    let theta = params.effective_theta();
    let d = dep_matrix(theta, params.rho);
    let cmat = fem.c();
    let kappa = [params.kappa1, params.kappa2];
    let sigma = [params.sigma1, params.sigma2];
    let c = [norm_const(kappa[0], sigma[0]), norm_const(kappa[1], sigma[1])];
    let b = [
        fem.g.add_scaled(1.0, &cmat, kappa[0] * kappa[0])?,
        fem.g.add_scaled(1.0, &cmat, kappa[1] * kappa[1])?,
    ];
    let l = [b[0].scale(c[0]), b[1].scale(c[1])];
    let k = block_k(&d, &l[0], &l[1])?;
    let h2: Vec<f64> = fem.h.iter().chain(fem.h.iter()).copied().collect();
    let inv_h2: Vec<f64> = h2.iter().map(|v| 1.0 / v).collect();
    let qx = k.transpose().matmul(&k.scale_rows(&inv_h2)?)?;
    Ok(LatentOperator {
        n: fem.n(),
        d,
        c,
        kappa,
        sigma,
        rho: params.rho,
        theta,
        l,
        b,
        k,
        qx,
        h2,
        fem_c: cmat,
        fem_g: fem.g.clone(),
    })
}

impl LatentOperator {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// `∂K` with the same structure as `K`.
    pub fn dk(&self, which: OperatorDerivative) -> Result<SparseMat> {
        let zero = [self.l[0].scale(0.0), self.l[1].scale(0.0)];
        match which {
            OperatorDerivative::LogKappa(f) => {
                let kk = self.kappa[f] * self.kappa[f];
                let dl = self.fem_g.add_scaled(-self.c[f], &self.fem_c, self.c[f] * kk)?;
                let mut blocks = zero;
                blocks[f] = dl;
                block_k(&self.d, &blocks[0], &blocks[1])
            }
            OperatorDerivative::LogSigma(f) => {
                let mut blocks = zero;
                blocks[f] = self.l[f].scale(-1.0);
                block_k(&self.d, &blocks[0], &blocks[1])
            }
            OperatorDerivative::Rho => block_k(&dep_matrix_drho(self.theta, self.rho), &self.l[0], &self.l[1]),
            OperatorDerivative::Theta => block_k(&dep_matrix_dtheta(self.theta, self.rho), &self.l[0], &self.l[1]),
        }
    }

    /// Factors of `G + κ_k² C` for both fields.
    pub fn factor_b(&self) -> Result<[SpdFactor; 2]> {
        Ok([SpdFactor::new(&self.b[0])?, SpdFactor::new(&self.b[1])?])
    }

    /// `log |K|` given the factors of `G + κ_k² C`.
    pub fn logdet_k_with(&self, fb: &[SpdFactor; 2]) -> f64 {
        let n = self.n as f64;
        n * (1.0 + self.rho * self.rho).sqrt().ln()
            + (0..2).map(|f| n * self.c[f].ln() + fb[f].logdet()).sum::<f64>()
    }

    /// `log |Q_x| = 2 log |K| − Σ log h2`.
    pub fn logdet_qx_with(&self, fb: &[SpdFactor; 2]) -> f64 {
        2.0 * self.logdet_k_with(fb) - self.h2.iter().map(|h| h.ln()).sum::<f64>()
    }

    pub fn logdet_qx(&self) -> Result<f64> {
        Ok(self.logdet_qx_with(&self.factor_b()?))
    }

    /// `tr(K⁻¹ ∂K)` in closed form.
    pub fn trace_kinv_dk(&self, which: OperatorDerivative, fb: &[SpdFactor; 2]) -> Result<f64> {
        let n = self.n as f64;
        Ok(match which {
            OperatorDerivative::LogKappa(f) => {
                let kk = self.kappa[f] * self.kappa[f];
                let diag = crate::sparse::SelectedInverse::new(&fb[f]).diag();
                let s: f64 = diag.iter().zip(self.fem_c.diagonal()).map(|(z, c)| z * c).sum();
                2.0 * kk * s - n
            }
            OperatorDerivative::LogSigma(_) => -n,
            OperatorDerivative::Rho => n * self.rho / (1.0 + self.rho * self.rho),
            OperatorDerivative::Theta => 0.0,
        })
    }

    /// `K x`.
    pub fn apply_k(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.k.mul_vec(x)
    }

    /// Solves `K x = y` through `D⁻¹` and the two SPD blocks.
    pub fn solve_k(&self, y: &[f64], fb: &[SpdFactor; 2]) -> Result<Vec<f64>> {
        let n = self.n;
        if y.len() != 2 * n {
            return Err(Error::DimensionMismatch("solve_k right-hand side".into()));
        }
        let d = &self.d;
        let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
        let mut u = vec![0.0; 2 * n];
        for i in 0..n {
            let (a, b) = (y[i], y[n + i]);
            u[i] = (d[1][1] * a - d[0][1] * b) / det;
            u[n + i] = (-d[1][0] * a + d[0][0] * b) / det;
        }
        let x1 = fb[0].solve(&u[..n])?;
        let x2 = fb[1].solve(&u[n..])?;
        Ok(x1
            .iter()
            .map(|v| v / self.c[0])
            .chain(x2.iter().map(|v| v / self.c[1]))
            .collect())
    }
}

/// Matérn covariance with smoothness one: `σ² (κ d) K₁(κ d)`.
pub fn matern_cov(dist: f64, kappa: f64, sigma: f64) -> f64 {
    let x = kappa * dist;
    if x < 1e-12 {
        return sigma * sigma;
    }
    sigma * sigma * x * bessel_k1(x)
}

/// Pearson correlation between the two fields implied by `(κ₁, κ₂, ρ)`.
pub fn pearson_corr(params: &BivModelParams) -> f64 {
    pearson_corr_raw(params.kappa1, params.kappa2, params.rho)
}

pub fn pearson_corr_raw(kappa1: f64, kappa2: f64, rho: f64) -> f64 {
    let s = (1.0 + rho * rho).sqrt();
    if (kappa1 - kappa2).abs() <= 1e-10 * kappa1.max(kappa2) {
        return rho / s;
    }
    2.0 * rho * kappa1 * kappa2 * (kappa1 / kappa2).ln() / (s * (kappa1 * kappa1 - kappa2 * kappa2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{assemble_fem, make_rect_mesh, TriMesh};
    use nalgebra::DMatrix;

    #[test]
    fn dep_matrix_cases() {
        assert_eq!(dep_matrix(0.0, 0.0), [[1.0, 0.0], [0.0, 1.0]]);
        let d = dep_matrix(0.0, 1.0);
        assert_eq!(d[0][0], 1.0);
        assert_eq!(d[0][1], 0.0);
        assert_eq!(d[1][0], -1.0);
        assert!((d[1][1] - 2f64.sqrt()).abs() < 1e-15);
        for &(t, r) in &[(0.3, -2.0), (4.0, 0.5), (1.0, 10.0)] {
            let d = dep_matrix(t, r);
            let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
            assert!((det - (1.0 + r * r).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn dep_matrix_derivatives_match_differences() {
        let (t, r, e) = (0.7, -0.4, 1e-6);
        let dr = dep_matrix_drho(t, r);
        let dt = dep_matrix_dtheta(t, r);
        let (p, m) = (dep_matrix(t, r + e), dep_matrix(t, r - e));
        let (pt, mt) = (dep_matrix(t + e, r), dep_matrix(t - e, r));
        for i in 0..2 {
            for j in 0..2 {
                assert!(((p[i][j] - m[i][j]) / (2.0 * e) - dr[i][j]).abs() < 1e-8);
                assert!(((pt[i][j] - mt[i][j]) / (2.0 * e) - dt[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn norm_const_value() {
        let c = norm_const(2.0, 0.5);
        assert!((c - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn single_triangle_precision_matches_dense() {
        let mesh = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let p = BivModelParams::gaussian(1.0, 1.0, 1.0, 1.0, 0.3);
        let op = build_operator(&p, &fem).unwrap();
        // explicit C and G of the reference triangle
        let g = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5]);
        let cm = DMatrix::from_diagonal_element(3, 3, 1.0 / 6.0);
        let c = 1.0 / (2.0 * PI.sqrt());
        let l = (&g + &cm) * c;
        let d = dep_matrix(0.0, 0.3);
        let dd = DMatrix::from_row_slice(2, 2, &[d[0][0], d[0][1], d[1][0], d[1][1]]);
        let mut bl = DMatrix::zeros(6, 6);
        bl.view_mut((0, 0), (3, 3)).copy_from(&l);
        bl.view_mut((3, 3), (3, 3)).copy_from(&l);
        let k = dd.kronecker(&DMatrix::identity(3, 3)) * bl;
        let hinv = DMatrix::from_diagonal_element(6, 6, 6.0);
        let q = k.transpose() * hinv * &k;
        assert!((op.qx.to_dense() - q).amax() < 1e-12);
        assert!((op.k.to_dense() - &k).amax() < 1e-14);
        let ld = op.logdet_qx().unwrap();
        assert!((ld - op.qx.to_dense().determinant().ln()).abs() < 1e-10);
    }

    #[test]
    fn independent_fields_give_block_diagonal_precision() {
        let fem = assemble_fem(&make_rect_mesh((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap()).unwrap();
        let op = build_operator(&BivModelParams::gaussian(2.0, 3.0, 1.0, 2.0, 0.0), &fem).unwrap();
        let q = op.qx.to_dense();
        assert!(q.view((0, 16), (16, 16)).amax() == 0.0);
    }

    #[test]
    fn label_swap_symmetry() {
        let fem = assemble_fem(&make_rect_mesh((0.0, 1.0), (0.0, 1.0), 3, 4).unwrap()).unwrap();
        let op = build_operator(&BivModelParams::gaussian(2.0, 2.0, 1.5, 1.5, 0.6), &fem).unwrap();
        let q = op.qx.to_dense();
        let n = fem.n();
        for i in 0..2 * n {
            for j in 0..2 * n {
                let si = (i + n) % (2 * n);
                let sj = (j + n) % (2 * n);
                assert!((q[(i, j)] - q[(si, sj)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_traces_match_dense() {
        let fem = assemble_fem(&make_rect_mesh((0.0, 1.0), (0.0, 1.0), 3, 3).unwrap()).unwrap();
        let mut p = BivModelParams::nig(1.5, 2.5, 0.7, 1.3, 0.4, 0.3, [1.0, 1.0], [0.0, 0.0]);
        p.kind = NoiseKind::Nig;
        let op = build_operator(&p, &fem).unwrap();
        let fb = op.factor_b().unwrap();
        let kinv = op.k.to_dense().try_inverse().unwrap();
        for which in [
            OperatorDerivative::LogKappa(0),
            OperatorDerivative::LogKappa(1),
            OperatorDerivative::LogSigma(1),
            OperatorDerivative::Rho,
            OperatorDerivative::Theta,
        ] {
            let dk = op.dk(which).unwrap();
            assert!(dk.same_structure(&op.k));
            let oracle = (&kinv * dk.to_dense()).trace();
            assert!((op.trace_kinv_dk(which, &fb).unwrap() - oracle).abs() < 1e-9, "{which:?}");
        }
        let det = op.k.to_dense().determinant();
        assert!((op.logdet_k_with(&fb) - det.ln()).abs() < 1e-10);
        let y: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = op.solve_k(&y, &fb).unwrap();
        let r = op.apply_k(&x).unwrap();
        assert!(r.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern_cov(0.0, 2.0, 1.5), 2.25);
        assert!((matern_cov(1.0, 1.0, 1.0) - 0.6019072301972346).abs() < 1e-13);
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let v = matern_cov(k as f64 * 0.1, 2.0, 1.0);
            assert!(v < prev || k == 0);
            prev = v;
        }
    }

    #[test]
    fn pearson_cases() {
        assert_eq!(pearson_corr_raw(1.0, 2.0, 0.0), 0.0);
        assert!((pearson_corr_raw(3.0, 3.0, 1.0) - 0.5f64.sqrt()).abs() < 1e-15);
        let v = pearson_corr_raw(1.0, 2.0, 1.0);
        let expected = (2.0 * 2.0 / 2f64.sqrt()) * 0.5f64.ln() / (1.0 - 4.0);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.653505).abs() < 1e-6);
        assert!((pearson_corr_raw(2.0, 1.0, 1.0) - v).abs() < 1e-15);
        assert!((pearson_corr_raw(1.0, 2.0, -1.0) + v).abs() < 1e-15);
    }
}
