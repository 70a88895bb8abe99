//! Command-line front end. `main` parses [`Cli`] and calls [`run`].

use crate::error::{Error, Result};
use crate::experiments::{run_sim_study, summarize, write_summary, write_table, Cell, SimStudyConfig};
use crate::gaussian_fit::{fit_gauss, predict_gauss, Dataset, FitResult, GaussFitOptions};
use crate::mesh_fem::{assemble_fem, make_rect_mesh, TriMesh};
use crate::model::{build_operator, BivModelParams, NoiseKind};
use crate::nig_fit::{fit_nig, predict_nig, write_trace, PredictOptions, SgdOptions};
use crate::noise::{NuggetParams, NuggetStructure};
use crate::obs::{Observation, ObservationSet};
use crate::optim::BfgsOptions;
use crate::params::{FullParams, ParamId};
use crate::scoring::{crps_gauss, crps_rb, mae, rmse, scrps_gauss, scrps_rb, split_streams};
use crate::simulate::{sim_gauss_weights, sim_nig_weights, sim_observations, uniform_locations};
use crate::windows::{
    aggregate, best_model_counts, run_windows, synthetic_observations, write_rows, SyntheticConfig, WindowsConfig,
};
use clap::{ArgAction, Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "bispde", version, about = "Bivariate Gaussian and NIG Matérn-SPDE fields with a correlated nugget")]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "BISPDE_THREADS")]
    pub threads: Option<usize>,
    /// More log output on stderr (repeat for debug and trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate observations from a model and nugget configuration.
    Simulate(SimulateArgs),
    /// Estimate parameters from an observations CSV.
    Fit(FitArgs),
    /// Predict latent fields at new locations from a fit.
    Predict(PredictArgs),
    /// Score predictions against held-out values.
    Score(ScoreArgs),
    /// Run the correlation-grid simulation study.
    SimStudy(SimStudyArgs),
    /// Run the moving-window pipeline on latitude/longitude data.
    Windows(WindowsArgs),
    /// Generate synthetic latitude/longitude data for the window pipeline.
    WindowsData(WindowsDataArgs),
    /// Generate or inspect a mesh.
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Write every configuration file with its default values.
    ConfigSchema(ConfigSchemaArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation config (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output observations CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Output CSV for the held-out test sites (`test_points` in the config).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Also write the simulation mesh as JSON.
    #[arg(long)]
    pub mesh_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Observations CSV.
    #[arg(long)]
    pub obs: PathBuf,
    /// Fit config (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mesh JSON; a padded rectangular mesh over the data when omitted.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Output fit JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Output optimizer trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Fit JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Observations the fit conditions on.
    #[arg(long)]
    pub obs: PathBuf,
    /// Prediction sites in the observations format (`value` is ignored).
    #[arg(long)]
    pub locations: PathBuf,
    /// Output predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// For NIG fits, write per-sample predictive components here.
    #[arg(long)]
    pub components: Option<PathBuf>,
    /// Gibbs sweeps for NIG prediction, burn-in included.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Fraction of sweeps discarded as burn-in.
    #[arg(long, default_value_t = 0.2)]
    pub burn_in: f64,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Predictions CSV written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Observations CSV with the true values, rows aligned with the predictions.
    #[arg(long)]
    pub truth: PathBuf,
    /// Components CSV from `predict`; switches CRPS and SCRPS to the mixture estimators.
    #[arg(long)]
    pub components: Option<PathBuf>,
    /// Output scores CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimStudyArgs {
    /// Study config (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cell as `rho=R,rho_eps=E`; repeatable. Overrides the config's cells.
    #[arg(long = "cells")]
    pub cells: Vec<String>,
    /// Number of seeds; runs seeds `seed+1 ..= seed+N`. Overrides the config.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Output estimates CSV (one row per cell, seed and structure).
    #[arg(long)]
    pub out: PathBuf,
    /// Output summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WindowsArgs {
    /// Observations CSV: `x` longitude, `y` latitude, `t` day of year, `replicate` year.
    #[arg(long)]
    pub obs: PathBuf,
    /// Window config (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the output tables.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct WindowsDataArgs {
    /// Window config (JSON) selecting grid and boxes.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic-data config (JSON).
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Output observations CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum MeshCommand {
    /// Structured triangulation of a rectangle.
    Generate {
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 10.0)]
        x1: f64,
        #[arg(long, default_value_t = 0.0)]
        y0: f64,
        #[arg(long, default_value_t = 10.0)]
        y1: f64,
        /// Vertices along x.
        #[arg(long, default_value_t = 31)]
        nx: usize,
        /// Vertices along y.
        #[arg(long, default_value_t = 31)]
        ny: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print mesh statistics as key=value lines.
    Inspect {
        #[arg(long)]
        mesh: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct ConfigSchemaArgs {
    /// Directory receiving one JSON file per configuration type.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Configuration of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: FullParams,
    /// Side lengths of `[0, w] × [0, h]`.
    pub domain: [f64; 2],
    /// Vertices per side; zero picks one from the correlation range.
    pub mesh_nodes: usize,
    /// Co-located sites per replicate in the training output.
    pub n_points: usize,
    pub replicates: usize,
    /// Extra co-located sites per replicate written to the test output.
    pub test_points: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            params: FullParams::new(
                BivModelParams::gaussian(2.0, 2.0, 1.0, 1.0, 0.5),
                NuggetParams::new(0.5, 0.5, 0.3, NuggetStructure::General),
            ),
            domain: [10.0, 10.0],
            mesh_nodes: 0,
            n_points: 500,
            replicates: 1,
            test_points: 100,
        }
    }
}

impl SimulateConfig {
    pub fn mesh(&self) -> Result<TriMesh> {
        let study = SimStudyConfig {
            kappa: [self.params.model.kappa1, self.params.model.kappa2],
            domain: self.domain,
            mesh_nodes: self.mesh_nodes,
            ..Default::default()
        };
        study.mesh()
    }
}

/// Configuration of `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kind: NoiseKind,
    pub structure: NuggetStructure,
    /// Vertices per side of the automatic mesh.
    pub mesh_nodes: usize,
    /// Padding of the automatic mesh as a fraction of the data extent.
    pub mesh_padding: f64,
    pub min_points: usize,
    /// BFGS iteration cap (Gaussian fits).
    pub max_iter: usize,
    /// Standard errors from the observed information (Gaussian fits).
    pub std_errors: bool,
    /// Parameters held at their starting values (Gaussian fits; NIG fits use `sgd.fixed`).
    pub fixed: Vec<ParamId>,
    /// Starting values; data-driven when absent.
    pub init: Option<FullParams>,
    pub sgd: SgdOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            structure: NuggetStructure::General,
            mesh_nodes: 30,
            mesh_padding: 0.1,
            min_points: 100,
            max_iter: 500,
            std_errors: false,
            fixed: Vec::new(),
            init: None,
            sgd: SgdOptions::default(),
        }
    }
}

/// What `fit` writes: the estimate together with the mesh it refers to.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitFile {
    pub kind: NoiseKind,
    pub structure: NuggetStructure,
    pub covariate_names: Vec<String>,
    pub mesh: TriMesh,
    pub fit: FitResult,
}

/// One row of the predictions CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub replicate: i64,
    pub field: u8,
    pub x: f64,
    pub y: f64,
    /// Predicted latent mean (plus the covariate effect).
    pub mean: f64,
    /// Predictive variance of the latent field.
    pub var: f64,
    /// Average conditional variance (equals `var` for Gaussian fits).
    pub var_within: f64,
    /// Predictive variance of a new observation (`var + σ_ε²`).
    pub pred_var: f64,
}

/// One row of the components CSV: predictive law of a new observation given
/// one kept Gibbs sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub row: usize,
    pub sample: usize,
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldScoreRow {
    pub field: u8,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub crps: f64,
    pub scrps: f64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn config_or_default<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| Error::Parse {
            file: name.clone(),
            line: k + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads observations and rejects an empty file.
pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let obs = ObservationSet::read_csv(path)?;
    if obs.is_empty() {
        return Err(Error::InsufficientData(format!("no observations in {}", path.display())));
    }
    Ok(obs)
}

/// Parses `rho=R,rho_eps=E` (also accepts `rho_e`).
pub fn parse_cell(s: &str) -> Result<Cell> {
    let mut rho = None;
    let mut rho_e = None;
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("cell `{s}`: expected key=value pairs")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("cell `{s}`: invalid number `{v}`")))?;
        match k.trim() {
            "rho" => rho = Some(v),
            "rho_eps" | "rho_e" => rho_e = Some(v),
            other => return Err(Error::Config(format!("cell `{s}`: unknown key `{other}`"))),
        }
    }
    match (rho, rho_e) {
        (Some(rho), Some(rho_e)) => Ok(Cell { rho, rho_e }),
        _ => Err(Error::Config(format!("cell `{s}` needs both rho and rho_eps"))),
    }
}

/// Padded rectangle around all observation sites.
pub fn auto_mesh(obs: &ObservationSet, nodes: usize, padding: f64) -> Result<TriMesh> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in &obs.records {
        x0 = x0.min(r.x);
        x1 = x1.max(r.x);
        y0 = y0.min(r.y);
        y1 = y1.max(r.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let pad = padding.max(0.0) * span + 1e-9 * span;
    make_rect_mesh((x0 - pad, x1 + pad), (y0 - pad, y1 + pad), nodes, nodes)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let config: SimulateConfig = config_or_default(&args.config)?;
    config.params.validate()?;
    if config.n_points == 0 || config.replicates == 0 {
        return Err(Error::Config("n_points and replicates must be positive".into()));
    }
    let mesh = config.mesh()?;
    let fem = assemble_fem(&mesh)?;
    let op = build_operator(&config.params.model, &fem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut train = Vec::with_capacity(config.replicates);
    let mut test = Vec::with_capacity(config.replicates);
    for r in 0..config.replicates {
        let w = match config.params.model.kind {
            NoiseKind::Gaussian => sim_gauss_weights(&op, &mut rng)?,
            NoiseKind::Nig => sim_nig_weights(&op, &config.params.model, &mut rng)?.0,
        };
        let locs = uniform_locations(&mesh, config.n_points + config.test_points, &mut rng);
        let rep = sim_observations(&w, &mesh, [&locs, &locs], [&[], &[]], &config.params.nugget, r as i64, &mut rng)?;
        let mut a = rep.clone();
        let mut b = rep;
        for f in 0..2 {
            let data = &mut a.fields[f];
            data.locs.truncate(config.n_points);
            data.values.truncate(config.n_points);
            data.t.truncate(config.n_points);
            data.covariates.truncate(config.n_points);
            data.source.truncate(config.n_points);
            let data = &mut b.fields[f];
            data.locs.drain(..config.n_points);
            data.values.drain(..config.n_points);
            data.t.drain(..config.n_points);
            data.covariates.drain(..config.n_points);
            data.source.drain(..config.n_points);
        }
        train.push(a);
        test.push(b);
    }
    ObservationSet::from_replicates(&train, Vec::new()).write_csv(&args.out)?;
    if let Some(p) = &args.test_out {
        ObservationSet::from_replicates(&test, Vec::new()).write_csv(p)?;
    }
    if let Some(p) = &args.mesh_out {
        mesh.write_json(p)?;
    }
    log::info!(
        "event=simulate_done replicates={} points={} test_points={} vertices={}",
        config.replicates,
        config.n_points,
        config.test_points,
        mesh.n_vertices()
    );
    Ok(())
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let config: FitConfig = config_or_default(&args.config)?;
    let obs = read_observations(&args.obs)?;
    let mesh = match &args.mesh {
        Some(p) => TriMesh::read_json(p)?,
        None => auto_mesh(&obs, config.mesh_nodes, config.mesh_padding)?,
    };
    let data = Dataset::new(&mesh, &obs)?;
    log::info!(
        "event=fit_start kind={:?} structure={:?} n1={} n2={} replicates={} vertices={}",
        config.kind,
        config.structure,
        data.field_counts[0],
        data.field_counts[1],
        data.systems.len(),
        mesh.n_vertices()
    );
    let (result, trace_rows) = match config.kind {
        NoiseKind::Gaussian => {
            let opts = GaussFitOptions {
                structure: config.structure,
                fixed: config.fixed.clone(),
                min_points: config.min_points,
                bfgs: BfgsOptions {
                    max_iter: config.max_iter,
                    ..Default::default()
                },
                std_errors: config.std_errors,
            };
            let f = fit_gauss(&data, config.init, &opts)?;
            (f, None)
        }
        NoiseKind::Nig => {
            let opts = SgdOptions {
                structure: config.structure,
                min_points: config.min_points,
                seed: config.sgd.seed.wrapping_add(cli.seed),
                ..config.sgd.clone()
            };
            let f = fit_nig(&data, config.init, &opts)?;
            let mut buf = Vec::new();
            write_trace(&f, &mut buf)?;
            (f.fit, Some(buf))
        }
    };
    log::info!(
        "event=fit_done converged={} iterations={} loglik={}",
        result.converged,
        result.iterations,
        result.loglik.map_or("NA".to_string(), |l| l.to_string())
    );
    if let Some(p) = &args.trace {
        match trace_rows {
            Some(buf) => std::fs::write(p, buf)?,
            None => {
                let mut w = csv::Writer::from_writer(create(p)?);
                let mut header = vec!["iteration".to_string()];
                header.extend(result.param_names.iter().cloned());
                w.write_record(&header)?;
                for (i, row) in result.trace.iter().enumerate() {
                    let mut rec = vec![i.to_string()];
                    rec.extend(row.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
                w.flush()?;
            }
        }
    }
    let file = FitFile {
        kind: config.kind,
        structure: config.structure,
        covariate_names: obs.covariate_names.clone(),
        mesh,
        fit: result,
    };
    write_json(&file, &args.out)
}

fn covariate_effect(fit: &FitResult, n_cov: usize, rec: &Observation) -> Result<f64> {
    if n_cov == 0 {
        return Ok(0.0);
    }
    if rec.covariates.len() != n_cov {
        return Err(Error::DimensionMismatch(format!(
            "prediction site has {} covariates, the fit uses {n_cov}",
            rec.covariates.len()
        )));
    }
    let off = usize::from(rec.field - 1) * n_cov;
    Ok(rec.covariates.iter().zip(&fit.beta[off..off + n_cov]).map(|(c, b)| c * b).sum())
}

fn predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let file: FitFile = read_json(&args.fit)?;
    let obs = read_observations(&args.obs)?;
    if obs.covariate_names != file.covariate_names {
        return Err(Error::Config(format!(
            "covariates {:?} differ from the fit's {:?}",
            obs.covariate_names, file.covariate_names
        )));
    }
    let sites = ObservationSet::read_csv(&args.locations)?;
    let data = Dataset::new(&file.mesh, &obs)?;
    let n_cov = file.covariate_names.len();
    let nugget_sd = [file.fit.params.nugget.sigma_e1, file.fit.params.nugget.sigma_e2];
    let mut rows: Vec<Option<PredictionRow>> = vec![None; sites.len()];
    let mut components = Vec::new();
    let opts = PredictOptions {
        samples: args.samples,
        burn_in: args.burn_in,
        seed: cli.seed,
    };
    for rep in sites.replicates() {
        let r = data.replicate_index(rep.id)?;
        let locs = [rep.fields[0].locs.as_slice(), rep.fields[1].locs.as_slice()];
        let (fields, within, comps) = match file.kind {
            NoiseKind::Gaussian => {
                let p = predict_gauss(&file.fit, &data, r, locs)?;
                let w = [p[0].var.clone(), p[1].var.clone()];
                (p, w, None)
            }
            NoiseKind::Nig => {
                let p = predict_nig(&file.fit, &data, r, locs, &opts)?;
                (p.fields, p.var_within, Some(p.components))
            }
        };
        for k in 0..2 {
            for (i, &src) in rep.fields[k].source.iter().enumerate() {
                let rec = &sites.records[src];
                let shift = covariate_effect(&file.fit, n_cov, rec)?;
                let nv = nugget_sd[k] * nugget_sd[k];
                rows[src] = Some(PredictionRow {
                    replicate: rec.replicate,
                    field: rec.field,
                    x: rec.x,
                    y: rec.y,
                    mean: fields[k].mean[i] + shift,
                    var: fields[k].var[i],
                    var_within: within[k][i],
                    pred_var: fields[k].var[i] + nv,
                });
                if let Some(c) = &comps {
                    for (s, sample) in c[k].iter().enumerate() {
                        let (m, v) = sample[i];
                        components.push(ComponentRow {
                            row: src,
                            sample: s,
                            mean: m + shift,
                            var: v + nv,
                        });
                    }
                }
            }
        }
    }
    let rows: Vec<PredictionRow> = rows.into_iter().map(|r| r.expect("every site predicted")).collect();
    write_rows(&rows, &PREDICTION_HEADER, create(&args.out)?)?;
    if let Some(p) = &args.components {
        if file.kind != NoiseKind::Nig {
            return Err(Error::Config("components are only available for NIG fits".into()));
        }
        components.sort_by_key(|c| (c.row, c.sample));
        write_rows(&components, &["row", "sample", "mean", "var"], create(p)?)?;
    }
    log::info!("event=predict_done sites={}", rows.len());
    Ok(())
}

const PREDICTION_HEADER: [&str; 8] = ["replicate", "field", "x", "y", "mean", "var", "var_within", "pred_var"];

fn score(args: &ScoreArgs) -> Result<()> {
    let preds: Vec<PredictionRow> = read_csv_rows(&args.predictions)?;
    let truth = ObservationSet::read_csv(&args.truth)?;
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} true values",
            preds.len(),
            truth.len()
        )));
    }
    for (i, (p, t)) in preds.iter().zip(&truth.records).enumerate() {
        if p.field != t.field || p.replicate != t.replicate || (p.x - t.x).abs() > 1e-9 || (p.y - t.y).abs() > 1e-9 {
            return Err(Error::Parse {
                file: args.truth.display().to_string(),
                line: i + 2,
                message: "row does not match the prediction site".into(),
            });
        }
    }
    let mut comps: Vec<Vec<(f64, f64)>> = vec![Vec::new(); preds.len()];
    if let Some(p) = &args.components {
        for c in read_csv_rows::<ComponentRow>(p)? {
            comps
                .get_mut(c.row)
                .ok_or_else(|| Error::DimensionMismatch(format!("component row {} out of range", c.row)))?
                .push((c.mean, c.var));
        }
    }
    let mut out = Vec::new();
    for field in [1u8, 2] {
        let idx: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].field == field).collect();
        if idx.is_empty() {
            continue;
        }
        let y: Vec<f64> = idx.iter().map(|&i| truth.records[i].value).collect();
        let m: Vec<f64> = idx.iter().map(|&i| preds[i].mean).collect();
        let (mut crps, mut scrps) = (0.0, 0.0);
        for (&i, &yi) in idx.iter().zip(&y) {
            if args.components.is_some() {
                let (a, b) = split_streams(&comps[i]);
                crps += crps_rb(&a, &b, yi)?;
                scrps += scrps_rb(&a, &b, yi)?;
            } else {
                let sd = preds[i].pred_var.sqrt();
                crps += crps_gauss(preds[i].mean, sd, yi)?;
                scrps += scrps_gauss(preds[i].mean, sd, yi)?;
            }
        }
        let n = idx.len() as f64;
        out.push(FieldScoreRow {
            field,
            n: idx.len(),
            rmse: rmse(&m, &y)?,
            mae: mae(&m, &y)?,
            crps: crps / n,
            scrps: scrps / n,
        });
    }
    write_rows(&out, &["field", "n", "rmse", "mae", "crps", "scrps"], create(&args.out)?)
}

fn sim_study(cli: &Cli, args: &SimStudyArgs) -> Result<()> {
    let mut config: SimStudyConfig = config_or_default(&args.config)?;
    if !args.cells.is_empty() {
        config.cells = args.cells.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?;
    }
    if let Some(n) = args.seeds {
        config.seeds = (1..=n).map(|s| s + cli.seed).collect();
    } else {
        config.seeds.iter_mut().for_each(|s| *s = s.wrapping_add(cli.seed));
    }
    let rows = run_sim_study(&config)?;
    write_table(&rows, create(&args.out)?)?;
    if let Some(p) = &args.summary {
        write_summary(&summarize(&rows)?, create(p)?)?;
    }
    log::info!("event=sim_study_done rows={}", rows.len());
    Ok(())
}

const WINDOW_HEADER: [&str; 7] = ["box_id", "lat", "lon", "n1", "n2", "status", "reason"];
const PARAM_HEADER: [&str; 18] = [
    "box_id", "model", "status", "kappa1", "kappa2", "sigma1", "sigma2", "rho", "eta1", "eta2", "mu1", "mu2", "sigma_e1",
    "sigma_e2", "rho_e", "loglik", "converged", "error",
];
const SCORE_HEADER: [&str; 8] = ["box_id", "model", "field", "n", "rmse", "mae", "crps", "scrps"];
const GLOBAL_HEADER: [&str; 6] = ["model", "field", "metric", "value", "n_points", "n_windows"];
const TALLY_HEADER: [&str; 4] = ["field", "metric", "model", "wins"];
const QQ_HEADER: [&str; 8] = ["box_id", "model", "field", "prob", "observed", "env_lo", "env_median", "env_hi"];

fn windows(cli: &Cli, args: &WindowsArgs) -> Result<()> {
    let mut config: WindowsConfig = config_or_default(&args.config)?;
    config.seed = config.seed.wrapping_add(cli.seed);
    let obs = read_observations(&args.obs)?;
    let report = run_windows(&obs, &config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    write_rows(&report.windows, &WINDOW_HEADER, create(&dir.join("windows.csv"))?)?;
    write_rows(&report.params, &PARAM_HEADER, create(&dir.join("params.csv"))?)?;
    write_rows(&report.scores, &SCORE_HEADER, create(&dir.join("scores.csv"))?)?;
    write_rows(&aggregate(&report.scores), &GLOBAL_HEADER, create(&dir.join("global.csv"))?)?;
    write_rows(&best_model_counts(&report.scores), &TALLY_HEADER, create(&dir.join("tallies.csv"))?)?;
    write_rows(&report.qq, &QQ_HEADER, create(&dir.join("qq.csv"))?)?;
    let fitted = report.windows.iter().filter(|w| w.status == "fitted").count();
    log::info!("event=windows_done boxes={} fitted={fitted}", report.windows.len());
    Ok(())
}

fn windows_data(cli: &Cli, args: &WindowsDataArgs) -> Result<()> {
    let config: WindowsConfig = config_or_default(&args.config)?;
    let synth: SyntheticConfig = config_or_default(&args.synthetic)?;
    let grid = config.grid()?;
    let obs = synthetic_observations(&grid, &config, &synth, cli.seed)?;
    obs.write_csv(&args.out)?;
    log::info!("event=windows_data_done boxes={} records={}", grid.len(), obs.len());
    Ok(())
}

fn mesh(cmd: &MeshCommand) -> Result<()> {
    match cmd {
        MeshCommand::Generate { x0, x1, y0, y1, nx, ny, out } => {
            let m = make_rect_mesh((*x0, *x1), (*y0, *y1), *nx, *ny)?;
            m.write_json(out)
        }
        MeshCommand::Inspect { mesh } => {
            let m = TriMesh::read_json(mesh)?;
            let (x0, x1, y0, y1) = m.bbox();
            let boundary = m.boundary_flags().iter().filter(|b| **b).count();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "vertices={}", m.n_vertices())?;
            writeln!(out, "triangles={}", m.triangles().len())?;
            writeln!(out, "boundary_vertices={boundary}")?;
            writeln!(out, "area={}", m.area())?;
            writeln!(out, "max_edge={}", m.max_edge())?;
            writeln!(out, "bbox={x0},{x1},{y0},{y1}")?;
            Ok(())
        }
    }
}

fn config_schema(args: &ConfigSchemaArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let d = &args.out_dir;
    write_json(&SimulateConfig::default(), &d.join("simulate.json"))?;
    write_json(&FitConfig::default(), &d.join("fit.json"))?;
    write_json(&SimStudyConfig::default(), &d.join("sim-study.json"))?;
    write_json(&WindowsConfig::default(), &d.join("windows.json"))?;
    write_json(&SyntheticConfig::default(), &d.join("synthetic.json"))?;
    Ok(())
}

/// Executes one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Predict(a) => predict(cli, a),
        Command::Score(a) => score(a),
        Command::SimStudy(a) => sim_study(cli, a),
        Command::Windows(a) => windows(cli, a),
        Command::WindowsData(a) => windows_data(cli, a),
        Command::Mesh(c) => mesh(c),
        Command::ConfigSchema(a) => config_schema(a),
    }
}
