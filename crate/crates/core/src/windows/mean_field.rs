//! Local mean field: quadratic surface in the centered coordinates plus six
//! annual harmonics in the day of year, fitted by least squares.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const N_HARMONICS: usize = 6;
pub const N_COEF: usize = 6 + 2 * N_HARMONICS;
const PERIOD: f64 = 365.0;

/// Coefficients ordered as intercept, `x`, `y`, `xy`, `x²`, `y²`, then
/// `cos(2πkt/365)` for `k = 1..6` and `sin(2πkt/365)` for `k = 1..6`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldFit {
    pub coef: Vec<f64>,
    /// Center the coordinates were taken relative to.
    pub center: [f64; 2],
}

pub fn design_row(x: f64, y: f64, t: f64) -> [f64; N_COEF] {
    let mut r = [0.0; N_COEF];
    r[..6].copy_from_slice(&[1.0, x, y, x * y, x * x, y * y]);
    for k in 1..=N_HARMONICS {
        let a = 2.0 * PI * k as f64 * t / PERIOD;
        r[5 + k] = a.cos();
        r[5 + N_HARMONICS + k] = a.sin();
    }
    r
}

impl MeanFieldFit {
    pub fn eval(&self, loc: [f64; 2], t: f64) -> f64 {
        let r = design_row(loc[0] - self.center[0], loc[1] - self.center[1], t);
        r.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

/// Ordinary least squares through a thin QR factorization. Fails when there
/// are fewer than 18 points, fewer than two distinct days, or the design is
/// numerically rank deficient.
pub fn fit_mean_field(locs: &[[f64; 2]], days: &[f64], values: &[f64], center: [f64; 2]) -> Result<MeanFieldFit> {
    let m = values.len();
    if locs.len() != m || days.len() != m {
        return Err(Error::DimensionMismatch("mean-field inputs differ in length".into()));
    }
    if m < N_COEF {
        return Err(Error::InsufficientData(format!("{m} observations for {N_COEF} mean-field coefficients")));
    }
    let mut distinct: Vec<f64> = days.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData("mean field needs at least two distinct days".into()));
    }
    let mut x = DMatrix::zeros(m, N_COEF);
    for i in 0..m {
        let r = design_row(locs[i][0] - center[0], locs[i][1] - center[1], days[i]);
        for (j, v) in r.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let qr = x.qr();
    let r = qr.r();
    let dmax = (0..N_COEF).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..N_COEF).any(|i| r[(i, i)].abs() <= 1e-10 * dmax) {
        return Err(Error::RankDeficient("mean-field design matrix".into()));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(values);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("mean-field triangular solve".into()))?;
    Ok(MeanFieldFit {
        coef: coef.iter().copied().collect(),
        center,
    })
}
