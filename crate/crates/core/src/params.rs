//! Working-space parameterization shared by the optimizers.
//!
//! `κ`, `σ`, `σ_ε` and `η` are mapped through `log`, `ρ_ε` through
//! `log((1 + ρ_ε) / (1 − ρ_ε))`; `ρ`, `θ` and `μ` are left as they are.

use crate::error::{Error, Result};
use crate::model::{BivModelParams, NoiseKind};
use crate::noise::{rho_from_working, rho_to_working, NuggetParams, NuggetStructure};
use serde::{Deserialize, Serialize};

/// Identifier of one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    Kappa1,
    Kappa2,
    Sigma1,
    Sigma2,
    Rho,
    Theta,
    SigmaE1,
    SigmaE2,
    RhoE,
    Eta1,
    Eta2,
    Mu1,
    Mu2,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::Kappa1,
        ParamId::Kappa2,
        ParamId::Sigma1,
        ParamId::Sigma2,
        ParamId::Rho,
        ParamId::Theta,
        ParamId::SigmaE1,
        ParamId::SigmaE2,
        ParamId::RhoE,
        ParamId::Eta1,
        ParamId::Eta2,
        ParamId::Mu1,
        ParamId::Mu2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Kappa1 => "kappa1",
            ParamId::Kappa2 => "kappa2",
            ParamId::Sigma1 => "sigma1",
            ParamId::Sigma2 => "sigma2",
            ParamId::Rho => "rho",
            ParamId::Theta => "theta",
            ParamId::SigmaE1 => "sigma_e1",
            ParamId::SigmaE2 => "sigma_e2",
            ParamId::RhoE => "rho_e",
            ParamId::Eta1 => "eta1",
            ParamId::Eta2 => "eta2",
            ParamId::Mu1 => "mu1",
            ParamId::Mu2 => "mu2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == s)
    }
}

/// Latent and nugget parameters together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullParams {
    pub model: BivModelParams,
    pub nugget: NuggetParams,
}

impl FullParams {
    pub fn new(model: BivModelParams, nugget: NuggetParams) -> Self {
        Self { model, nugget }
    }

    /// Natural-scale value of one parameter.
    pub fn get(&self, id: ParamId) -> f64 {
        let (m, e) = (&self.model, &self.nugget);
        match id {
            ParamId::Kappa1 => m.kappa1,
            ParamId::Kappa2 => m.kappa2,
            ParamId::Sigma1 => m.sigma1,
            ParamId::Sigma2 => m.sigma2,
            ParamId::Rho => m.rho,
            ParamId::Theta => m.theta,
            ParamId::SigmaE1 => e.sigma_e1,
            ParamId::SigmaE2 => e.sigma_e2,
            ParamId::RhoE => e.rho_e,
            ParamId::Eta1 => m.eta1,
            ParamId::Eta2 => m.eta2,
            ParamId::Mu1 => m.mu1,
            ParamId::Mu2 => m.mu2,
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        let (m, e) = (&mut self.model, &mut self.nugget);
        match id {
            ParamId::Kappa1 => m.kappa1 = v,
            ParamId::Kappa2 => m.kappa2 = v,
            ParamId::Sigma1 => m.sigma1 = v,
            ParamId::Sigma2 => m.sigma2 = v,
            ParamId::Rho => m.rho = v,
            ParamId::Theta => m.theta = v,
            ParamId::SigmaE1 => e.sigma_e1 = v,
            ParamId::SigmaE2 => e.sigma_e2 = v,
            ParamId::RhoE => e.rho_e = v,
            ParamId::Eta1 => m.eta1 = v,
            ParamId::Eta2 => m.eta2 = v,
            ParamId::Mu1 => m.mu1 = v,
            ParamId::Mu2 => m.mu2 = v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.nugget.validate()
    }
}

/// Working-scale value of a parameter.
pub fn to_working_scalar(id: ParamId, v: f64) -> f64 {
    match id {
        ParamId::Kappa1
        | ParamId::Kappa2
        | ParamId::Sigma1
        | ParamId::Sigma2
        | ParamId::SigmaE1
        | ParamId::SigmaE2
        | ParamId::Eta1
        | ParamId::Eta2 => v.ln(),
        ParamId::RhoE => rho_to_working(v),
        ParamId::Rho | ParamId::Theta | ParamId::Mu1 | ParamId::Mu2 => v,
    }
}

pub fn from_working_scalar(id: ParamId, w: f64) -> f64 {
    match id {
        ParamId::Kappa1
        | ParamId::Kappa2
        | ParamId::Sigma1
        | ParamId::Sigma2
        | ParamId::SigmaE1
        | ParamId::SigmaE2
        | ParamId::Eta1
        | ParamId::Eta2 => w.exp(),
        ParamId::RhoE => rho_from_working(w),
        ParamId::Rho | ParamId::Theta | ParamId::Mu1 | ParamId::Mu2 => w,
    }
}

/// Which parameters an estimator moves, in working-vector order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub active: Vec<ParamId>,
}

impl ParamLayout {
    /// Default free parameters for a model family and nugget structure.
    ///
    /// `θ` is left out (zero for Gaussian noise, fixed at its start value for
    /// NIG unless `fit_theta` is set); `ρ_ε` only appears for the general structure.
    pub fn for_model(kind: NoiseKind, structure: NuggetStructure, fit_theta: bool, fixed: &[ParamId]) -> Self {
        let mut active = vec![ParamId::Kappa1, ParamId::Kappa2, ParamId::Sigma1, ParamId::Sigma2, ParamId::Rho];
        if kind == NoiseKind::Nig && fit_theta {
            active.push(ParamId::Theta);
        }
        active.extend([ParamId::SigmaE1, ParamId::SigmaE2]);
        if structure == NuggetStructure::General {
            active.push(ParamId::RhoE);
        }
        if kind == NoiseKind::Nig {
            active.extend([ParamId::Eta1, ParamId::Eta2, ParamId::Mu1, ParamId::Mu2]);
        }
        active.retain(|p| !fixed.contains(p));
        Self { active }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn position(&self, id: ParamId) -> Option<usize> {
        self.active.iter().position(|&p| p == id)
    }

    pub fn to_working(&self, p: &FullParams) -> Vec<f64> {
        self.active.iter().map(|&id| to_working_scalar(id, p.get(id))).collect()
    }

    /// Applies a working vector on top of `base` (inactive entries keep their values).
    pub fn from_working(&self, w: &[f64], base: &FullParams) -> Result<FullParams> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "working vector of length {} for {} parameters",
                w.len(),
                self.len()
            )));
        }
        let mut p = *base;
        for (&id, &v) in self.active.iter().zip(w) {
            p.set(id, from_working_scalar(id, v));
        }
        Ok(p)
    }

    /// Picks the active entries out of a full gradient indexed by [`ParamId`].
    pub fn select(&self, full: &[f64; 13]) -> Vec<f64> {
        self.active.iter().map(|id| full[id.index()]).collect()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.active.iter().map(|p| p.name()).collect()
    }
}
