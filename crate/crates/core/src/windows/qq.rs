//! Quantiles of the predicted latent field at the observation sites, set
//! against envelopes from data simulated under the fitted model.

use crate::error::Result;
use crate::experiments::quantile_sorted;
use crate::gaussian_fit::{predict_gauss, Dataset, FitResult};
use crate::mesh_fem::TriMesh;
use crate::model::{build_operator, BivModelParams, NoiseKind};
use crate::nig_fit::{predict_nig, PredictOptions};
use crate::obs::{ObservationSet, Replicate};
use crate::simulate::{sim_gauss_weights_with, sim_nig_weights, sim_observations};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QqPoint {
    pub prob: f64,
    pub observed: f64,
    pub env_lo: f64,
    pub env_median: f64,
    pub env_hi: f64,
}

/// Predicted latent means at every observation site, per field, pooled over
/// replicates.
pub fn latent_at_sites(fit: &FitResult, kind: NoiseKind, data: &Dataset, reps: &[Replicate], predict: &PredictOptions) -> Result<[Vec<f64>; 2]> {
    let mut out: [Vec<f64>; 2] = Default::default();
    for (r, rep) in reps.iter().enumerate() {
        let locs = [rep.fields[0].locs.as_slice(), rep.fields[1].locs.as_slice()];
        let fields = match kind {
            NoiseKind::Gaussian => predict_gauss(fit, data, r, locs)?,
            NoiseKind::Nig => predict_nig(fit, data, r, locs, predict)?.fields,
        };
        for k in 0..2 {
            out[k].extend_from_slice(&fields[k].mean);
        }
    }
    Ok(out)
}

/// Evenly spaced probabilities `(j − ½) / m`.
pub fn probabilities(m: usize) -> Vec<f64> {
    (1..=m).map(|j| (j as f64 - 0.5) / m as f64).collect()
}

fn quantiles(mut v: Vec<f64>, probs: &[f64]) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

/// Observed quantiles of the predicted latent field with pointwise min,
/// median and max over `sims` datasets simulated at the same sites from the
/// fitted model and predicted the same way.
#[allow(clippy::too_many_arguments)]
pub fn qq_envelope(
    fit: &FitResult,
    kind: NoiseKind,
    mesh: &TriMesh,
    obs: &ObservationSet,
    sims: usize,
    n_probs: usize,
    predict: &PredictOptions,
    seed: u64,
) -> Result<[Vec<QqPoint>; 2]> {
    let probs = probabilities(n_probs);
    let reps = obs.replicates();
    let data = Dataset::new(mesh, obs)?;
    let observed = latent_at_sites(fit, kind, &data, &reps, predict)?;
    let model = match kind {
        NoiseKind::Gaussian => BivModelParams {
            kind: NoiseKind::Gaussian,
            theta: 0.0,
            ..fit.params.model
        },
        NoiseKind::Nig => fit.params.model,
    };
    let op = build_operator(&model, &data.fem)?;
    let fb = op.factor_b()?;
    let mut sim_q: [Vec<Vec<f64>>; 2] = Default::default();
    for s in 0..sims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut sim_reps = Vec::with_capacity(reps.len());
        for rep in &reps {
            let w = match kind {
                NoiseKind::Gaussian => sim_gauss_weights_with(&op, &fb, &mut rng)?,
                NoiseKind::Nig => sim_nig_weights(&op, &model, &mut rng)?.0,
            };
            let locs = [rep.fields[0].locs.as_slice(), rep.fields[1].locs.as_slice()];
            sim_reps.push(sim_observations(&w, mesh, locs, [&[], &[]], &fit.params.nugget, rep.id, &mut rng)?);
        }
        let sim_set = ObservationSet::from_replicates(&sim_reps, vec![]);
        let sim_data = Dataset::new(mesh, &sim_set)?;
        let mut sim_fit = fit.clone();
        sim_fit.beta.clear();
        let pred = latent_at_sites(&sim_fit, kind, &sim_data, &sim_reps, predict)?;
        for k in 0..2 {
            sim_q[k].push(quantiles(pred[k].clone(), &probs));
        }
    }
    let mut out: [Vec<QqPoint>; 2] = Default::default();
    for k in 0..2 {
        if observed[k].is_empty() {
            continue;
        }
        let obs_q = quantiles(observed[k].clone(), &probs);
        for (j, &p) in probs.iter().enumerate() {
            let mut col: Vec<f64> = sim_q[k].iter().map(|q| q[j]).collect();
            col.sort_by(f64::total_cmp);
            let (lo, med, hi) = if col.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (col[0], quantile_sorted(&col, 0.5), col[col.len() - 1])
            };
            out[k].push(QqPoint {
                prob: p,
                observed: obs_q[j],
                env_lo: lo,
                env_median: med,
                env_hi: hi,
            });
        }
    }
    Ok(out)
}
