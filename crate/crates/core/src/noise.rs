//! Correlated nugget: measurement noise that couples the two fields at shared
//! observation locations.

use crate::error::{Error, Result};
use crate::sparse::SparseMat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Whether paired noise terms may correlate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NuggetStructure {
    Diagonal,
    #[default]
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuggetParams {
    pub sigma_e1: f64,
    pub sigma_e2: f64,
    #[serde(default)]
    pub rho_e: f64,
    #[serde(default)]
    pub structure: NuggetStructure,
}

/// Entries of the 2×2 precision of a co-located pair plus the precisions of
/// unpaired observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPrecision {
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
    pub u1: f64,
    pub u2: f64,
}

impl NuggetParams {
    pub fn new(sigma_e1: f64, sigma_e2: f64, rho_e: f64, structure: NuggetStructure) -> Self {
        Self {
            sigma_e1,
            sigma_e2,
            rho_e,
            structure,
        }
    }

    pub fn diagonal(sigma_e1: f64, sigma_e2: f64) -> Self {
        Self::new(sigma_e1, sigma_e2, 0.0, NuggetStructure::Diagonal)
    }

    /// `ρ_ε`, forced to zero under the diagonal structure.
    pub fn effective_rho(&self) -> f64 {
        match self.structure {
            NuggetStructure::Diagonal => 0.0,
            NuggetStructure::General => self.rho_e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_e1", self.sigma_e1), ("sigma_e2", self.sigma_e2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let r = self.effective_rho();
        if !(r.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("|rho_e| must be below 1, got {r}")));
        }
        Ok(())
    }

    pub fn pair_precision(&self) -> PairPrecision {
        let r = self.effective_rho();
        let (s1, s2) = (self.sigma_e1, self.sigma_e2);
        let q = 1.0 - r * r;
        PairPrecision {
            p11: 1.0 / (q * s1 * s1),
            p12: -r / (q * s1 * s2),
            p22: 1.0 / (q * s2 * s2),
            u1: 1.0 / (s1 * s1),
            u2: 1.0 / (s2 * s2),
        }
    }

    /// Derivatives of the precision entries with respect to
    /// `(log σ_ε1, log σ_ε2, θ_ρε)` with `ρ_ε = tanh(θ_ρε / 2)`.
    pub fn pair_precision_derivatives(&self) -> [PairPrecision; 3] {
        let p = self.pair_precision();
        let r = self.effective_rho();
        let (s1, s2) = (self.sigma_e1, self.sigma_e2);
        let q = 1.0 - r * r;
        let dr_dtheta = 0.5 * q;
        let d_ls1 = PairPrecision {
            p11: -2.0 * p.p11,
            p12: -p.p12,
            p22: 0.0,
            u1: -2.0 * p.u1,
            u2: 0.0,
        };
        let d_ls2 = PairPrecision {
            p11: 0.0,
            p12: -p.p12,
            p22: -2.0 * p.p22,
            u1: 0.0,
            u2: -2.0 * p.u2,
        };
        let d_rho = PairPrecision {
            p11: 2.0 * r / q * p.p11 * dr_dtheta,
            p12: -(1.0 + r * r) / (q * q * s1 * s2) * dr_dtheta,
            p22: 2.0 * r / q * p.p22 * dr_dtheta,
            u1: 0.0,
            u2: 0.0,
        };
        [d_ls1, d_ls2, d_rho]
    }

    /// Draws a noise pair `(ε₁, ε₂)` with the nugget covariance; zero
    /// standard deviations are allowed here.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let r = self.effective_rho();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let e1 = self.sigma_e1 * z1;
        let e2 = self.sigma_e2 * (r * z1 + (1.0 - r * r).sqrt() * z2);
        (e1, e2)
    }
}

/// `θ_ρε = log((1 + ρ) / (1 − ρ))`.
pub fn rho_to_working(rho: f64) -> f64 {
    ((1.0 + rho) / (1.0 - rho)).ln()
}

/// Inverse of [`rho_to_working`]: `ρ = tanh(θ / 2)`.
pub fn rho_from_working(theta: f64) -> f64 {
    (0.5 * theta).tanh()
}

/// Working representation `(log σ_ε1, log σ_ε2[, θ_ρε])`.
pub fn to_working(p: &NuggetParams) -> Vec<f64> {
    let mut v = vec![p.sigma_e1.ln(), p.sigma_e2.ln()];
    if p.structure == NuggetStructure::General {
        v.push(rho_to_working(p.rho_e));
    }
    v
}

pub fn from_working(w: &[f64], structure: NuggetStructure) -> NuggetParams {
    let rho_e = match structure {
        NuggetStructure::General => rho_from_working(w[2]),
        NuggetStructure::Diagonal => 0.0,
    };
    NuggetParams::new(w[0].exp(), w[1].exp(), rho_e, structure)
}

/// Which observation of one field shares its location with an observation of
/// the other field.
///
/// Observations are indexed with field-1 entries first (`0..n1`) and field-2
/// entries after (`n1..n1+n2`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NuggetLayout {
    pub n1: usize,
    pub n2: usize,
    pub pair_index: Vec<Option<usize>>,
}

fn location_key(p: [f64; 2]) -> (i64, i64) {
    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
}

impl NuggetLayout {
    /// Pairs observations with identical coordinates after rounding to 1e−9.
    pub fn from_locations(loc1: &[[f64; 2]], loc2: &[[f64; 2]]) -> Self {
        let (n1, n2) = (loc1.len(), loc2.len());
        let mut by_key: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (j, &p) in loc2.iter().enumerate().rev() {
            by_key.entry(location_key(p)).or_default().push(j);
        }
        let mut pair_index = vec![None; n1 + n2];
        for (i, &p) in loc1.iter().enumerate() {
            if let Some(j) = by_key.get_mut(&location_key(p)).and_then(|v| v.pop()) {
                pair_index[i] = Some(n1 + j);
                pair_index[n1 + j] = Some(i);
            }
        }
        Self { n1, n2, pair_index }
    }

    pub fn unpaired(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            pair_index: vec![None; n1 + n2],
        }
    }

    pub fn len(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs `(i, j)` with `i` in field 1 and `j` in field 2 (global indices).
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n1).filter_map(move |i| self.pair_index[i].map(|j| (i, j)))
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs().count()
    }

    pub fn field_of(&self, i: usize) -> usize {
        usize::from(i >= self.n1)
    }
}

/// Sparse precision `Q_ε` of the stacked noise vector.
pub fn nugget_precision(params: &NuggetParams, layout: &NuggetLayout) -> Result<SparseMat> {
    params.validate()?;
    let p = params.pair_precision();
    let mut t = Vec::with_capacity(layout.len() + 2 * layout.n_pairs());
    for i in 0..layout.len() {
        let field = layout.field_of(i);
        match layout.pair_index[i] {
            Some(j) => {
                t.push((i, i, if field == 0 { p.p11 } else { p.p22 }));
                t.push((i, j, p.p12));
            }
            None => t.push((i, i, if field == 0 { p.u1 } else { p.u2 })),
        }
    }
    SparseMat::from_triplets(layout.len(), layout.len(), &t)
}

/// `log |Q_ε|` in closed form.
pub fn nugget_logdet(params: &NuggetParams, layout: &NuggetLayout) -> f64 {
    let r = params.effective_rho();
    let (ls1, ls2) = (params.sigma_e1.ln(), params.sigma_e2.ln());
    let m = layout.n_pairs() as f64;
    let u1 = (layout.n1 as f64) - m;
    let u2 = (layout.n2 as f64) - m;
    m * (-(1.0 - r * r).ln() - 2.0 * ls1 - 2.0 * ls2) - 2.0 * u1 * ls1 - 2.0 * u2 * ls2
}
