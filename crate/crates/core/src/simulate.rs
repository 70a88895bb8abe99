//! Exact simulation of latent weights and noisy observations.

use crate::error::{Error, Result};
use crate::mesh_fem::{projector, TriMesh};
use crate::model::{BivModelParams, LatentOperator};
use crate::nig_dist::{ig_sample, IgParams};
use crate::noise::{NuggetLayout, NuggetParams};
use crate::obs::{FieldData, Replicate};
use crate::sparse::SpdFactor;
use rand::Rng;
use rand_distr::StandardNormal;

/// `w = K⁻¹ diag(√h2) z`.
pub fn sim_gauss_weights<R: Rng + ?Sized>(op: &LatentOperator, rng: &mut R) -> Result<Vec<f64>> {
    let fb = op.factor_b()?;
    sim_gauss_weights_with(op, &fb, rng)
}

pub fn sim_gauss_weights_with<R: Rng + ?Sized>(
    op: &LatentOperator,
    fb: &[SpdFactor; 2],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = op
        .h2
        .iter()
        .map(|h| h.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    op.solve_k(&rhs, fb)
}

/// Draws `v_{k,i} ~ IG(η_k, η_k h_i²)` for both fields, stacked.
pub fn sim_mixing<R: Rng + ?Sized>(op: &LatentOperator, params: &BivModelParams, rng: &mut R) -> Result<Vec<f64>> {
    let n = op.n;
    let mut v = Vec::with_capacity(2 * n);
    for f in 0..2 {
        for i in 0..n {
            v.push(ig_sample(&IgParams::mixing(params.eta(f), op.h2[i])?, rng));
        }
    }
    Ok(v)
}

/// NIG weights: `v` from the mixing law, then
/// `w | v ~ N(K⁻¹ μ(v − h), K⁻¹ diag(v) K⁻ᵀ)`.
pub fn sim_nig_weights<R: Rng + ?Sized>(
    op: &LatentOperator,
    params: &BivModelParams,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let fb = op.factor_b()?;
    let v = sim_mixing(op, params, rng)?;
    let n = op.n;
    let rhs: Vec<f64> = (0..2 * n)
        .map(|i| {
            let mu = params.mu(i / n);
            mu * (v[i] - op.h2[i]) + v[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Ok((op.solve_k(&rhs, &fb)?, v))
}

/// Uniform locations inside the mesh (rejection from the bounding box).
pub fn uniform_locations<R: Rng + ?Sized>(mesh: &TriMesh, count: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let (x0, x1, y0, y1) = mesh.bbox();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [x0 + (x1 - x0) * rng.random::<f64>(), y0 + (y1 - y0) * rng.random::<f64>()];
        if mesh.contains(p) {
            out.push(p);
        }
    }
    out
}

/// Noisy observations `Y = m + A w + ε` for one replicate.
///
/// `locations[k]` and `means[k]` hold field `k`'s sites and mean values (an
/// empty mean vector means zero). Noise of co-located pairs is correlated.
pub fn sim_observations<R: Rng + ?Sized>(
    w: &[f64],
    mesh: &TriMesh,
    locations: [&[[f64; 2]]; 2],
    means: [&[f64]; 2],
    nugget: &NuggetParams,
    replicate_id: i64,
    rng: &mut R,
) -> Result<Replicate> {
    let n = mesh.n_vertices();
    if w.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!("weights of length {} for a mesh with {n} vertices", w.len())));
    }
    if nugget.sigma_e1 < 0.0 || nugget.sigma_e2 < 0.0 || nugget.effective_rho().abs() > 1.0 {
        return Err(Error::InvalidParameter("invalid nugget for simulation".into()));
    }
    let mut fields: [FieldData; 2] = Default::default();
    for f in 0..2 {
        let a = projector(mesh, locations[f])?;
        let signal = a.mul_vec(&w[f * n..(f + 1) * n])?;
        if !means[f].is_empty() && means[f].len() != locations[f].len() {
            return Err(Error::DimensionMismatch("mean vector length".into()));
        }
        for (i, &s) in signal.iter().enumerate() {
            let m = means[f].get(i).copied().unwrap_or(0.0);
            fields[f].push(locations[f][i], m + s);
        }
    }
    let layout = NuggetLayout::from_locations(locations[0], locations[1]);
    let n1 = layout.n1;
    let sig = [nugget.sigma_e1, nugget.sigma_e2];
    for i in 0..layout.len() {
        let f = layout.field_of(i);
        let local = if f == 0 { i } else { i - n1 };
        match layout.pair_index[i] {
            Some(j) if f == 0 => {
                let (e1, e2) = nugget.sample_pair(rng);
                fields[0].values[local] += e1;
                fields[1].values[j - n1] += e2;
            }
            Some(_) => {}
            None => {
                let z: f64 = rng.sample(StandardNormal);
                fields[f].values[local] += sig[f] * z;
            }
        }
    }
    Ok(Replicate {
        id: replicate_id,
        fields,
    })
}
