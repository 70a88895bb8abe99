//! Leave-one-out predictive moments at fixed parameters.
//!
//! With `P = Σ_Y⁻¹ = Q_ε − Q_ε A Q̃⁻¹ Aᵀ Q_ε`, the law of `Y_i` given all other
//! observations has mean `y_i − (P r)_i / P_ii` and variance `1 / P_ii`,
//! where `r` is the residual from the marginal mean. `P_ii` needs only the
//! entries of `Q̃⁻¹` between the vertices of the observation's triangle, which
//! the selected inverse provides.

use crate::error::{Error, Result};
use crate::gaussian_fit::{beta_coef, Dataset, FitResult};
use crate::model::{build_operator, BivModelParams, NoiseKind};
use crate::nig_fit::{gibbs_step, latent_mean, GibbsState, PredictOptions};
use crate::noise::nugget_precision;
use crate::posterior::{Conditional, ReplicateSystem};
use crate::sparse::{SelectedInverse, SparseMat};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn system<'a>(data: &'a Dataset, replicate: usize) -> Result<&'a ReplicateSystem> {
    data.systems
        .get(replicate)
        .ok_or_else(|| Error::InvalidParameter(format!("replicate index {replicate} out of range")))
}

/// `(mean, variance)` of each held-out `Y_i` (stacked index) given the rest,
/// for the conditional `cond` and a latent-mean contribution `shift = A K⁻¹ m`.
fn loo_moments(
    sys: &ReplicateSystem,
    cond: &Conditional,
    qe: &SparseMat,
    rows: &SparseMat,
    coef: &DVector<f64>,
    shift: Option<&[f64]>,
    held: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let n_obs = sys.n_obs();
    let mut r: Vec<f64> = (&sys.r * coef).iter().copied().collect();
    if let Some(s) = shift {
        r.iter_mut().zip(s).for_each(|(a, b)| *a -= b);
    }
    let u = qe.mul_vec(&r)?;
    let x = cond.factor.solve(&sys.a.tr_mul_vec(&u)?)?;
    let qax = qe.mul_vec(&sys.a.mul_vec(&x)?)?;
    let sel = SelectedInverse::new(&cond.factor);
    let mut out = Vec::with_capacity(held.len());
    for &i in held {
        if i >= n_obs {
            return Err(Error::InvalidParameter(format!("held-out index {i} out of range")));
        }
        // q = Aᵀ Q_ε e_i, supported on at most two triangles
        let mut q: Vec<(usize, f64)> = Vec::new();
        let (ji, jv) = qe.col(i);
        for (&j, &qji) in ji.iter().zip(jv) {
            let (ki, kv) = rows.col(j);
            for (&k, &a) in ki.iter().zip(kv) {
                match q.iter_mut().find(|e| e.0 == k) {
                    Some(e) => e.1 += qji * a,
                    None => q.push((k, qji * a)),
                }
            }
        }
        let mut quad = 0.0;
        for &(a, qa) in &q {
            for &(b, qb) in &q {
                let z = sel
                    .get(a, b)
                    .ok_or_else(|| Error::InvalidStructure(format!("entry ({a}, {b}) missing from the selected inverse")))?;
                quad += qa * qb * z;
            }
        }
        let pii = qe.get(i, i) - quad;
        if !(pii > 0.0) {
            return Err(Error::InvalidParameter(format!("non-positive leave-one-out precision at {i}")));
        }
        let pr = u[i] - qax[i];
        out.push((sys.r[(i, 0)] - pr / pii, 1.0 / pii));
    }
    Ok(out)
}

/// Gaussian leave-one-out moments for held-out stacked indices of one replicate.
pub fn loocv_gauss(fit: &FitResult, data: &Dataset, replicate: usize, held: &[usize]) -> Result<Vec<(f64, f64)>> {
    let p = &fit.params;
    let model = BivModelParams {
        kind: NoiseKind::Gaussian,
        theta: 0.0,
        ..p.model
    };
    let op = build_operator(&model, &data.fem)?;
    let sys = system(data, replicate)?;
    let cond = Conditional::new(sys, &op, &p.nugget, &op.h2, None)?;
    let qe = nugget_precision(&p.nugget, &sys.layout)?;
    let coef = beta_coef(&fit.beta, sys.n_resp())?;
    loo_moments(sys, &cond, &qe, &sys.a.transpose(), &coef, None, held)
}

/// NIG leave-one-out predictive as a normal variance mixture: for each kept
/// Gibbs draw of `v` the moments given `v` are Gaussian. Returns
/// `[held][sample]` components. The draws of `v` condition on all data.
pub fn loocv_nig(
    fit: &FitResult,
    data: &Dataset,
    replicate: usize,
    held: &[usize],
    opts: &PredictOptions,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let p = &fit.params;
    let sys = system(data, replicate)?;
    let burn = (opts.samples as f64 * opts.burn_in).floor() as usize;
    if opts.samples <= burn {
        return Err(Error::Config("no samples left after burn-in".into()));
    }
    let op = build_operator(&p.model, &data.fem)?;
    let fb = op.factor_b()?;
    let qe = nugget_precision(&p.nugget, &sys.layout)?;
    let rows = sys.a.transpose();
    let coef = beta_coef(&fit.beta, sys.n_resp())?;
    let mut state = GibbsState::initial(sys, &op, p, &coef)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = vec![Vec::with_capacity(opts.samples - burn); held.len()];
    for s in 0..opts.samples {
        let cond = gibbs_step(&mut state, sys, &op, p, &coef, &mut rng)?;
        if s < burn {
            continue;
        }
        let (m, _) = latent_mean(&op, &p.model, &state.v);
        let shift = sys.a.mul_vec(&op.solve_k(&m, &fb)?)?;
        let moments = loo_moments(sys, &cond, &qe, &rows, &coef, Some(&shift), held)?;
        for (slot, mv) in out.iter_mut().zip(moments) {
            slot.push(mv);
        }
    }
    Ok(out)
}
