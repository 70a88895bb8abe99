//! Bivariate Matérn fields through the SPDE approach: sparse linear algebra,
//! finite elements, Gaussian and normal-inverse-Gaussian models with a
//! correlated nugget, likelihood-based and stochastic-gradient estimation,
//! prediction, proper scoring, and a moving-window pipeline.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod gaussian_fit;
pub mod mesh_fem;
pub mod model;
pub mod nig_fit;
pub mod nig_dist;
pub mod noise;
pub mod obs;
pub mod optim;
pub mod params;
pub mod posterior;
pub mod scoring;
pub mod simulate;
pub mod sparse;
pub mod special;
pub mod windows;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/nig.md")]
    mod nig {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/windows.md")]
    mod windows {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
pub use sparse::{SelectedInverse, SparseMat, SpdFactor};
