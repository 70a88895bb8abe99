//! Exact marginal likelihood of the Gaussian model, its maximization, and
//! kriging on the mesh.

use crate::error::{Error, Result};
use crate::mesh_fem::{assemble_fem, FemMatrices, TriMesh};
use crate::model::{build_operator, BivModelParams, NoiseKind};
use crate::noise::{NuggetParams, NuggetStructure};
use crate::obs::ObservationSet;
use crate::optim::{bfgs, BfgsOptions};
use crate::params::{FullParams, ParamId, ParamLayout};
use crate::posterior::{conditional_score, projected_moments, Conditional, ReplicateSystem};
use crate::sparse::SelectedInverse;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observations prepared against one mesh.
#[derive(Debug)]
pub struct Dataset {
    pub mesh: TriMesh,
    pub fem: FemMatrices,
    pub systems: Vec<ReplicateSystem>,
    pub n_cov: usize,
    /// Per-field observation counts over all replicates.
    pub field_counts: [usize; 2],
}

impl Dataset {
    pub fn new(mesh: &TriMesh, obs: &ObservationSet) -> Result<Self> {
        let fem = assemble_fem(mesh)?;
        let n_cov = obs.covariate_names.len();
        let systems = obs
            .replicates()
            .iter()
            .map(|r| ReplicateSystem::new(mesh, r, n_cov))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh: mesh.clone(),
            fem,
            systems,
            n_cov,
            field_counts: obs.field_counts(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.field_counts[0] + self.field_counts[1]
    }

    /// Position of the replicate with the given id.
    pub fn replicate_index(&self, id: i64) -> Result<usize> {
        self.systems
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::InvalidParameter(format!("no replicate with id {id}")))
    }

    pub(crate) fn check_min_points(&self, min_points: usize) -> Result<()> {
        for (k, &c) in self.field_counts.iter().enumerate() {
            if c < min_points {
                return Err(Error::InsufficientData(format!(
                    "field {} has {c} observations, at least {min_points} required",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Starting values from the data: `σ` from the empirical spread, a
    /// correlation range of a quarter of the domain diameter, `ρ = 0` and a
    /// nugget at a tenth of `σ`.
    pub fn initial_params(&self, kind: NoiseKind, structure: NuggetStructure) -> FullParams {
        let mut sd = [1.0; 2];
        for (k, s) in sd.iter_mut().enumerate() {
            let mut vals = Vec::new();
            for sys in &self.systems {
                let off = if k == 0 { 0 } else { sys.layout.n1 };
                let len = if k == 0 { sys.layout.n1 } else { sys.layout.n2 };
                vals.extend((off..off + len).map(|i| sys.r[(i, 0)]));
            }
            if vals.len() > 1 {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (vals.len() - 1) as f64;
                if v > 0.0 {
                    *s = v.sqrt();
                }
            }
        }
        let kappa = 8f64.sqrt() / (self.mesh.diameter() / 4.0);
        let mut model = BivModelParams::gaussian(kappa, kappa, sd[0], sd[1], 0.0);
        if kind == NoiseKind::Nig {
            model = BivModelParams::nig(kappa, kappa, sd[0], sd[1], 0.0, 0.0, [1.0, 1.0], [0.0, 0.0]);
        }
        let nugget = NuggetParams::new(0.1 * sd[0], 0.1 * sd[1], 0.0, structure);
        FullParams::new(model, nugget)
    }
}

/// Estimates and diagnostics from either estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FullParams,
    /// Regression coefficients, field-1 block first.
    pub beta: Vec<f64>,
    /// Marginal log-likelihood (Gaussian fits only).
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Names of the working parameters in `trace`.
    pub param_names: Vec<String>,
    /// Working-parameter vector per iteration (per checkpoint for SGD).
    pub trace: Vec<Vec<f64>>,
    /// Working-space standard errors from the observed information.
    pub std_errors: Option<Vec<f64>>,
    /// Across-chain SD of the working parameters at the last checkpoint.
    pub chain_sd: Option<Vec<f64>>,
}

/// Log-likelihood, its gradient indexed by [`ParamId`] (working scale), and
/// the profiled regression coefficients.
#[derive(Clone, Debug)]
pub struct GaussEval {
    pub loglik: f64,
    pub grad: [f64; 13],
    pub beta: Vec<f64>,
}

fn as_gaussian(m: &BivModelParams) -> BivModelParams {
    BivModelParams {
        kind: NoiseKind::Gaussian,
        theta: 0.0,
        ..*m
    }
}

/// Evaluates the marginal log-likelihood summed over replicates, with the
/// regression coefficients profiled out by generalized least squares.
pub fn evaluate_gauss(data: &Dataset, p: &FullParams, with_grad: bool) -> Result<GaussEval> {
    p.validate()?;
    let model = as_gaussian(&p.model);
    let op = build_operator(&model, &data.fem)?;
    let fb = op.factor_b()?;
    let ldqx = op.logdet_qx_with(&fb);
    let conds = data
        .systems
        .par_iter()
        .map(|sys| Conditional::new(sys, &op, &p.nugget, &op.h2, None))
        .collect::<Result<Vec<_>>>()?;
    let r = 1 + 2 * data.n_cov;
    let mut m = DMatrix::zeros(r, r);
    let mut ll = 0.0;
    for (sys, c) in data.systems.iter().zip(&conds) {
        m += c.schur();
        ll += 0.5 * (ldqx + sys.nugget_logdet(&p.nugget) - c.factor.logdet() - sys.n_obs() as f64 * LN_2PI);
    }
    let mut coef = DVector::zeros(r);
    coef[0] = 1.0;
    let mut beta = Vec::new();
    if r > 1 {
        let mbb = m.view((1, 1), (r - 1, r - 1)).into_owned();
        let mby = m.view((1, 0), (r - 1, 1)).into_owned();
        let chol = mbb
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("covariate Gram matrix is singular".into()))?;
        let b = chol.solve(&mby);
        beta = b.iter().copied().collect();
        for (i, v) in b.iter().enumerate() {
            coef[1 + i] = -v;
        }
    }
    let quad = (coef.transpose() * &m * &coef)[(0, 0)];
    ll -= 0.5 * quad;
    let mut grad = [0.0; 13];
    if with_grad {
        let parts = data
            .systems
            .par_iter()
            .zip(&conds)
            .map(|(sys, c)| conditional_score(sys, &op, &fb, &p.nugget, &op.h2, None, c, &coef, false).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        for g in parts {
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        if p.nugget.structure == NuggetStructure::Diagonal {
            grad[ParamId::RhoE.index()] = 0.0;
        }
    }
    Ok(GaussEval { loglik: ll, grad, beta })
}

/// Marginal log-likelihood of the Gaussian model.
pub fn loglik_gauss(data: &Dataset, p: &FullParams) -> Result<f64> {
    Ok(evaluate_gauss(data, p, false)?.loglik)
}

#[derive(Clone, Debug)]
pub struct GaussFitOptions {
    pub structure: NuggetStructure,
    /// Parameters held at their initial values.
    pub fixed: Vec<ParamId>,
    pub min_points: usize,
    pub bfgs: BfgsOptions,
    pub std_errors: bool,
}

impl Default for GaussFitOptions {
    fn default() -> Self {
        Self {
            structure: NuggetStructure::General,
            fixed: Vec::new(),
            min_points: 100,
            bfgs: BfgsOptions::default(),
            std_errors: false,
        }
    }
}

fn wrap_factorization(w: &[f64], e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } => Error::Factorization {
            params: w.to_vec(),
            source: Box::new(e),
        },
        other => other,
    }
}

/// Maximizes the log-likelihood by BFGS in working space.
pub fn fit_gauss(data: &Dataset, init: Option<FullParams>, opts: &GaussFitOptions) -> Result<FitResult> {
    data.check_min_points(opts.min_points)?;
    let mut base = init.unwrap_or_else(|| data.initial_params(NoiseKind::Gaussian, opts.structure));
    base.model = as_gaussian(&base.model);
    base.nugget.structure = opts.structure;
    if opts.structure == NuggetStructure::Diagonal {
        base.nugget.rho_e = 0.0;
    }
    let layout = ParamLayout::for_model(NoiseKind::Gaussian, opts.structure, false, &opts.fixed);
    let objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = layout.from_working(w, &base)?;
        let e = evaluate_gauss(data, &p, true).map_err(|e| wrap_factorization(w, e))?;
        Ok((-e.loglik, layout.select(&e.grad).iter().map(|g| -g).collect()))
    };
    let w0 = layout.to_working(&base);
    let out = bfgs(objective, &w0, &opts.bfgs)?;
    if !out.converged {
        log::warn!("event=fit_gauss_not_converged iterations={}", out.iterations);
    }
    let params = layout.from_working(&out.x, &base)?;
    let eval = evaluate_gauss(data, &params, false)?;
    let std_errors = if opts.std_errors {
        observed_information_se(&objective, &out.x)
    } else {
        None
    };
    Ok(FitResult {
        params,
        beta: eval.beta,
        loglik: Some(eval.loglik),
        iterations: out.iterations,
        converged: out.converged,
        param_names: layout.names().into_iter().map(String::from).collect(),
        trace: out.trace,
        std_errors,
        chain_sd: None,
    })
}

/// Standard errors from a central-difference Hessian of the negative
/// log-likelihood built on the analytic gradient.
fn observed_information_se<F>(f: &F, x: &[f64]) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x.len();
    let h = 1e-4;
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let gp = f(&xp).ok()?.1;
        let gm = f(&xm).ok()?.1;
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let inv = sym.cholesky()?.inverse();
    Some((0..n).map(|i| inv[(i, i)].sqrt()).collect())
}

/// Kriging mean and variance per field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldPrediction {
    pub mean: Vec<f64>,
    /// Variance of the latent field (measurement noise excluded).
    pub var: Vec<f64>,
}

/// Conditional mean and variance of both latent fields at new locations,
/// given replicate `replicate` (position in `data.systems`).
pub fn predict_gauss(
    fit: &FitResult,
    data: &Dataset,
    replicate: usize,
    new_locations: [&[[f64; 2]]; 2],
) -> Result<[FieldPrediction; 2]> {
    let p = &fit.params;
    let model = as_gaussian(&p.model);
    let op = build_operator(&model, &data.fem)?;
    let sys = data
        .systems
        .get(replicate)
        .ok_or_else(|| Error::InvalidParameter(format!("replicate index {replicate} out of range")))?;
    let cond = Conditional::new(sys, &op, &p.nugget, &op.h2, None)?;
    let coef = beta_coef(&fit.beta, sys.n_resp())?;
    let xi = cond.mean(&coef);
    let sel = SelectedInverse::new(&cond.factor);
    let mut out: [FieldPrediction; 2] = Default::default();
    for k in 0..2 {
        let (mean, var) = projected_moments(&data.mesh, new_locations[k], k, &xi, &sel)?;
        out[k] = FieldPrediction { mean, var };
    }
    Ok(out)
}

pub(crate) fn beta_coef(beta: &[f64], r: usize) -> Result<DVector<f64>> {
    if beta.len() + 1 != r {
        return Err(Error::DimensionMismatch(format!(
            "{} regression coefficients for {} covariate columns",
            beta.len(),
            r - 1
        )));
    }
    let mut c = DVector::zeros(r);
    c[0] = 1.0;
    for (i, b) in beta.iter().enumerate() {
        c[1 + i] = -b;
    }
    Ok(c)
}
