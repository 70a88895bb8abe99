//! Synthetic two-variable data on a latitude/longitude grid, for exercising
//! the window pipeline end to end.

use super::grid::GridBox;
use super::pipeline::WindowsConfig;
use crate::error::{Error, Result};
use crate::mesh_fem::assemble_fem;
use crate::model::{build_operator, BivModelParams, NoiseKind};
use crate::noise::NuggetParams;
use crate::obs::{Observation, ObservationSet};
use crate::params::FullParams;
use crate::simulate::{sim_gauss_weights_with, sim_nig_weights, sim_observations};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub params: FullParams,
    /// Replicates, labelled `2000, 2001, …`.
    pub years: usize,
    /// Co-located sites per year inside the residual day range.
    pub in_season: usize,
    /// Co-located sites per year on other days.
    pub off_season: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            params: FullParams::new(
                BivModelParams::gaussian(0.4, 0.4, 1.0, 1.0, 0.5),
                NuggetParams::new(0.5, 0.5, 0.8, crate::noise::NuggetStructure::General),
            ),
            years: 3,
            in_season: 60,
            off_season: 40,
        }
    }
}

/// Mean surface used for both fields: a level, a gentle gradient and an
/// annual cycle.
pub fn synthetic_mean(field: u8, loc: [f64; 2], t: f64) -> f64 {
    let phase = 2.0 * PI * t / 365.0;
    if field == 1 {
        15.0 + 0.2 * loc[0] - 0.3 * loc[1] + 2.0 * phase.cos()
    } else {
        35.0 - 0.05 * loc[0] + 0.02 * loc[0] * loc[1] + 0.5 * phase.sin()
    }
}

/// Simulates each box's window independently (boxes whose windows overlap
/// get unrelated fields). Records carry longitude in `x`, latitude in `y`
/// and the day of year in `t`.
pub fn synthetic_observations(boxes: &[GridBox], windows: &WindowsConfig, config: &SyntheticConfig, seed: u64) -> Result<ObservationSet> {
    config.params.validate()?;
    if config.years == 0 || config.in_season + config.off_season == 0 {
        return Err(Error::Config("synthetic data needs at least one year and one site".into()));
    }
    let (d0, d1) = windows.residual_days;
    if !(1..=365).contains(&d0) || !(1..=365).contains(&d1) || (d1 - d0 + 1 == 365 && config.off_season > 0) {
        return Err(Error::Config("residual day range must leave room for off-season days".into()));
    }
    let mut records = Vec::new();
    for bx in boxes {
        let mesh = windows.window_mesh(bx)?;
        let fem = assemble_fem(&mesh)?;
        let op = build_operator(&config.params.model, &fem)?;
        let fb = op.factor_b()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(bx.id as u64);
        let (clat, clon) = bx.center();
        let [hx, hy] = bx.window_half_extent();
        let coslat = clat.to_radians().cos();
        for y in 0..config.years {
            let year = 2000 + y as i64;
            let w = match config.params.model.kind {
                NoiseKind::Gaussian => sim_gauss_weights_with(&op, &fb, &mut rng)?,
                NoiseKind::Nig => sim_nig_weights(&op, &config.params.model, &mut rng)?.0,
            };
            let n = config.in_season + config.off_season;
            let mut locs = Vec::with_capacity(n);
            let mut days = Vec::with_capacity(n);
            for i in 0..n {
                locs.push([rng.random_range(-hx..hx), rng.random_range(-hy..hy)]);
                let day = if i < config.in_season {
                    rng.random_range(d0..=d1)
                } else {
                    loop {
                        let d = rng.random_range(1..=365);
                        if d < d0 || d > d1 {
                            break d;
                        }
                    }
                };
                days.push(day);
            }
            let rep = sim_observations(&w, &mesh, [&locs, &locs], [&[], &[]], &config.params.nugget, year, &mut rng)?;
            for (f, data) in rep.fields.iter().enumerate() {
                let field = f as u8 + 1;
                for i in 0..data.len() {
                    let loc = data.locs[i];
                    let (lat, lon) = (clat + loc[1], clon + loc[0] / coslat);
                    records.push(Observation {
                        replicate: year,
                        field,
                        x: lon.rem_euclid(360.0),
                        y: lat,
                        t: Some(days[i]),
                        value: data.values[i] + synthetic_mean(field, loc, days[i] as f64),
                        covariates: Vec::new(),
                    });
                }
            }
        }
    }
    Ok(ObservationSet::new(records, Vec::new()))
}
