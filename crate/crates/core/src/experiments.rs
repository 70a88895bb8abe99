//! Simulation study over a grid of latent and nugget correlations, fitting
//! both nugget structures to every simulated dataset.

use crate::error::{Error, Result};
use crate::gaussian_fit::{fit_gauss, Dataset, GaussFitOptions};
use crate::mesh_fem::{assemble_fem, make_rect_mesh, TriMesh};
use crate::model::{build_operator, pearson_corr, BivModelParams};
use crate::noise::{NuggetParams, NuggetStructure};
use crate::obs::ObservationSet;
use crate::simulate::{sim_gauss_weights, sim_observations, uniform_locations};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const RHO_GRID: [f64; 7] = [-0.7, -0.2, -0.05, 0.0, 0.05, 0.2, 0.7];
pub const RHO_E_GRID: [f64; 6] = [-0.8, -0.4, -0.1, 0.1, 0.4, 0.8];

/// One `(ρ, ρ_ε)` configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rho: f64,
    pub rho_e: f64,
}

/// All 42 cells, `ρ` varying slowest.
pub fn full_grid() -> Vec<Cell> {
    RHO_GRID
        .iter()
        .flat_map(|&rho| RHO_E_GRID.iter().map(move |&rho_e| Cell { rho, rho_e }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStudyConfig {
    /// Cells to run; empty means the full grid.
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    /// Co-located sites per field and replicate.
    pub n_points: usize,
    /// Independent replicates per simulated dataset.
    pub replicates: usize,
    pub kappa: [f64; 2],
    pub sigma: [f64; 2],
    pub sigma_e: [f64; 2],
    /// Side lengths of the rectangular domain `[0, w] × [0, h]`.
    pub domain: [f64; 2],
    /// Vertices per side; zero picks the smallest count whose longest edge
    /// (the cell diagonal) is at most a third of the shorter correlation range.
    pub mesh_nodes: usize,
    pub structures: Vec<NuggetStructure>,
    pub max_iter: usize,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            cells: Vec::new(),
            seeds: (1..=10).collect(),
            n_points: 1000,
            replicates: 1,
            kappa: [2.0, 2.0],
            sigma: [1.0, 1.0],
            sigma_e: [0.5, 0.5],
            domain: [10.0, 10.0],
            mesh_nodes: 0,
            structures: vec![NuggetStructure::Diagonal, NuggetStructure::General],
            max_iter: 500,
        }
    }
}

impl SimStudyConfig {
    pub fn cells(&self) -> Vec<Cell> {
        if self.cells.is_empty() {
            full_grid()
        } else {
            self.cells.clone()
        }
    }

    pub fn mesh(&self) -> Result<TriMesh> {
        let nodes = if self.mesh_nodes > 0 {
            self.mesh_nodes
        } else {
            let range = 8f64.sqrt() / self.kappa[0].max(self.kappa[1]);
            let side = self.domain[0].max(self.domain[1]);
            (side * 2f64.sqrt() / (range / 3.0)).ceil() as usize + 1
        };
        make_rect_mesh((0.0, self.domain[0]), (0.0, self.domain[1]), nodes, nodes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.n_points == 0 || self.replicates == 0 || self.structures.is_empty() {
            return Err(Error::Config("seeds, n_points, replicates and structures must be non-empty".into()));
        }
        for c in self.cells() {
            if c.rho_e.abs() >= 1.0 {
                return Err(Error::Config(format!("rho_e = {} outside (-1, 1)", c.rho_e)));
            }
        }
        Ok(())
    }

    fn truth(&self, cell: Cell) -> (BivModelParams, NuggetParams) {
        (
            BivModelParams::gaussian(self.kappa[0], self.kappa[1], self.sigma[0], self.sigma[1], cell.rho),
            NuggetParams::new(self.sigma_e[0], self.sigma_e[1], cell.rho_e, NuggetStructure::General),
        )
    }
}

/// One fitted dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub rho: f64,
    pub rho_e: f64,
    pub structure: String,
    pub seed: u64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho_hat: f64,
    pub sigma_e1: f64,
    pub sigma_e2: f64,
    pub rho_e_hat: f64,
    pub pearson: f64,
    pub snr1: f64,
    pub snr1_true: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub error: String,
}

/// Simulates one dataset for `cell` and `seed`.
pub fn simulate_cell(config: &SimStudyConfig, mesh: &TriMesh, cell: Cell, seed: u64, stream: u64) -> Result<ObservationSet> {
    let fem = assemble_fem(mesh)?;
    let (model, nugget) = config.truth(cell);
    let op = build_operator(&model, &fem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut reps = Vec::with_capacity(config.replicates);
    for r in 0..config.replicates {
        let w = sim_gauss_weights(&op, &mut rng)?;
        let locs = uniform_locations(mesh, config.n_points, &mut rng);
        reps.push(sim_observations(&w, mesh, [&locs, &locs], [&[], &[]], &nugget, r as i64, &mut rng)?);
    }
    Ok(ObservationSet::from_replicates(&reps, Vec::new()))
}

fn structure_name(s: NuggetStructure) -> &'static str {
    match s {
        NuggetStructure::Diagonal => "diagonal",
        NuggetStructure::General => "general",
    }
}

/// Runs every (cell, seed) job; fit failures are recorded in the row.
pub fn run_sim_study(config: &SimStudyConfig) -> Result<Vec<SimRow>> {
    config.validate()?;
    let mesh = config.mesh()?;
    let cells = config.cells();
    let jobs: Vec<(usize, Cell, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| config.seeds.iter().map(move |&s| (i, c, s)))
        .collect();
    let snr_true = (config.sigma[0] / config.sigma_e[0]).powi(2);
    let per_job = jobs
        .par_iter()
        .map(|&(i, cell, seed)| -> Result<Vec<SimRow>> {
            // the stream index depends on the cell values so that subsets reproduce the full run
            let stream = full_grid().iter().position(|c| *c == cell).unwrap_or(100 + i) as u64;
            let obs = simulate_cell(config, &mesh, cell, seed, stream)?;
            let data = Dataset::new(&mesh, &obs)?;
            let mut rows = Vec::new();
            for &structure in &config.structures {
                let mut opts = GaussFitOptions {
                    structure,
                    min_points: 1,
                    ..Default::default()
                };
                opts.bfgs.max_iter = config.max_iter;
                let mut row = SimRow {
                    rho: cell.rho,
                    rho_e: cell.rho_e,
                    structure: structure_name(structure).into(),
                    seed,
                    kappa1: f64::NAN,
                    kappa2: f64::NAN,
                    sigma1: f64::NAN,
                    sigma2: f64::NAN,
                    rho_hat: f64::NAN,
                    sigma_e1: f64::NAN,
                    sigma_e2: f64::NAN,
                    rho_e_hat: f64::NAN,
                    pearson: f64::NAN,
                    snr1: f64::NAN,
                    snr1_true: snr_true,
                    loglik: f64::NAN,
                    converged: false,
                    iterations: 0,
                    error: String::new(),
                };
                match fit_gauss(&data, None, &opts) {
                    Ok(fit) => {
                        let (m, e) = (fit.params.model, fit.params.nugget);
                        row.kappa1 = m.kappa1;
                        row.kappa2 = m.kappa2;
                        row.sigma1 = m.sigma1;
                        row.sigma2 = m.sigma2;
                        row.rho_hat = m.rho;
                        row.sigma_e1 = e.sigma_e1;
                        row.sigma_e2 = e.sigma_e2;
                        row.rho_e_hat = e.effective_rho();
                        row.pearson = pearson_corr(&m);
                        row.snr1 = (m.sigma1 / e.sigma_e1).powi(2);
                        row.loglik = fit.loglik.unwrap_or(f64::NAN);
                        row.converged = fit.converged;
                        row.iterations = fit.iterations;
                    }
                    Err(err) => {
                        log::warn!("event=sim_fit_failed rho={} rho_e={} seed={seed} error=\"{err}\"", cell.rho, cell.rho_e);
                        row.error = err.to_string();
                    }
                }
                log::info!(
                    "event=sim_fit rho={} rho_e={} seed={seed} structure={} rho_hat={:.4} snr1={:.4}",
                    cell.rho,
                    cell.rho_e,
                    row.structure,
                    row.rho_hat,
                    row.snr1
                );
                rows.push(row);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

pub fn write_table<W: Write>(rows: &[SimRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: std::io::Read>(reader: R) -> Result<Vec<SimRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Quantiles of one estimate within one (cell, structure) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rho: f64,
    pub rho_e: f64,
    pub structure: String,
    pub estimate: String,
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per (cell, structure) quantiles of every estimate, failed fits skipped.
pub fn summarize(rows: &[SimRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty estimates table".into()));
    }
    let mut keys: Vec<(f64, f64, String)> = Vec::new();
    for r in rows {
        let k = (r.rho, r.rho_e, r.structure.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    type Getter = fn(&SimRow) -> f64;
    let estimates: [(&str, Getter); 11] = [
        ("kappa1", |r| r.kappa1),
        ("kappa2", |r| r.kappa2),
        ("sigma1", |r| r.sigma1),
        ("sigma2", |r| r.sigma2),
        ("rho", |r| r.rho_hat),
        ("sigma_e1", |r| r.sigma_e1),
        ("sigma_e2", |r| r.sigma_e2),
        ("rho_e", |r| r.rho_e_hat),
        ("pearson", |r| r.pearson),
        ("snr1", |r| r.snr1),
        ("loglik", |r| r.loglik),
    ];
    let mut out = Vec::new();
    for (rho, rho_e, structure) in keys {
        let group: Vec<&SimRow> = rows
            .iter()
            .filter(|r| r.rho == rho && r.rho_e == rho_e && r.structure == structure && r.error.is_empty())
            .collect();
        for (name, get) in estimates {
            let mut v: Vec<f64> = group.iter().map(|r| get(r)).filter(|x| x.is_finite()).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                rho,
                rho_e,
                structure: structure.clone(),
                estimate: name.into(),
                n: v.len(),
                min: v[0],
                q25: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q75: quantile_sorted(&v, 0.75),
                max: v[v.len() - 1],
            });
        }
    }
    Ok(out)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
