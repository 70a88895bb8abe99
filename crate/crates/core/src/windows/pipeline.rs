//! Per-window processing: mean-field removal, model fitting, leave-one-out
//! scoring over the reference box, and global aggregation.

use super::grid::{build_grid, GridBox};
use super::loocv::{loocv_gauss, loocv_nig};
use super::mean_field::{fit_mean_field, MeanFieldFit};
use super::qq::qq_envelope;
use crate::error::{Error, Result};
use crate::gaussian_fit::{fit_gauss, Dataset, FitResult, GaussFitOptions};
use crate::mesh_fem::{make_rect_mesh, TriMesh};
use crate::model::NoiseKind;
use crate::nig_fit::{fit_nig, PredictOptions, SgdOptions};
use crate::noise::NuggetStructure;
use crate::obs::{Observation, ObservationSet};
use crate::scoring::{crps_gauss, crps_rb, mae, rmse, scrps_gauss, scrps_rb, split_streams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: NoiseKind,
    pub structure: NuggetStructure,
}

impl ModelSpec {
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for kind in [NoiseKind::Gaussian, NoiseKind::Nig] {
            for structure in [NuggetStructure::Diagonal, NuggetStructure::General] {
                out.push(Self { kind, structure });
            }
        }
        out
    }

    pub fn name(&self) -> String {
        let k = match self.kind {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Nig => "nig",
        };
        let s = match self.structure {
            NuggetStructure::Diagonal => "diagonal",
            NuggetStructure::General => "general",
        };
        format!("{k}-{s}")
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsConfig {
    pub lat_span: (f64, f64),
    pub lon_span: (f64, f64),
    pub box_size: f64,
    pub margin: f64,
    /// Restrict processing to these box ids.
    pub boxes: Option<Vec<usize>>,
    /// Mesh vertices per side of the window.
    pub mesh_nodes: usize,
    /// Inclusive day-of-year range used for the residual models.
    pub residual_days: (i64, i64),
    pub min_points: usize,
    pub models: Vec<ModelSpec>,
    pub sgd: SgdOptions,
    pub predict: PredictOptions,
    /// Simulated datasets per QQ envelope (0 disables the diagnostic).
    pub qq_simulations: usize,
    pub qq_points: usize,
    pub qq_predict: PredictOptions,
    pub seed: u64,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        Self {
            lat_span: (-60.0, 60.0),
            lon_span: (0.0, 360.0),
            box_size: 10.0,
            margin: 5.0,
            boxes: None,
            mesh_nodes: 20,
            residual_days: (1, 31),
            min_points: 100,
            models: ModelSpec::all(),
            sgd: SgdOptions {
                iterations: 2000,
                checkpoint_interval: 250,
                offset: 200.0,
                ..Default::default()
            },
            predict: PredictOptions {
                samples: 200,
                ..Default::default()
            },
            qq_simulations: 20,
            qq_points: 19,
            qq_predict: PredictOptions {
                samples: 50,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

impl WindowsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mesh_nodes < 3 {
            return Err(Error::Config("mesh_nodes must be at least 3".into()));
        }
        if self.residual_days.0 > self.residual_days.1 {
            return Err(Error::Config("residual_days must be an increasing range".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models requested".into()));
        }
        if self.qq_simulations > 0 && self.qq_points == 0 {
            return Err(Error::Config("qq_points must be positive".into()));
        }
        if self.models.iter().any(|m| m.kind == NoiseKind::Nig) {
            self.sgd.validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<GridBox>> {
        let all = build_grid(self.lat_span, self.lon_span, self.box_size, self.margin)?;
        Ok(match &self.boxes {
            Some(ids) => all.into_iter().filter(|b| ids.contains(&b.id)).collect(),
            None => all,
        })
    }

    /// Rectangular mesh covering the window in local coordinates.
    pub fn window_mesh(&self, bx: &GridBox) -> Result<TriMesh> {
        let [hx, hy] = bx.window_half_extent();
        let pad = 1.0 + 1e-6;
        make_rect_mesh((-hx * pad, hx * pad), (-hy * pad, hy * pad), self.mesh_nodes, self.mesh_nodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowRow {
    pub box_id: usize,
    pub lat: f64,
    pub lon: f64,
    pub n1: usize,
    pub n2: usize,
    pub status: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamRow {
    pub box_id: usize,
    pub model: String,
    pub status: String,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub sigma_e1: Option<f64>,
    pub sigma_e2: Option<f64>,
    pub rho_e: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub box_id: usize,
    pub model: String,
    pub field: usize,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub crps: f64,
    pub scrps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QqRow {
    pub box_id: usize,
    pub model: String,
    pub field: usize,
    pub prob: f64,
    pub observed: f64,
    pub env_lo: f64,
    pub env_median: f64,
    pub env_hi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WindowReport {
    pub windows: Vec<WindowRow>,
    pub params: Vec<ParamRow>,
    pub scores: Vec<ScoreRow>,
    pub qq: Vec<QqRow>,
}

/// Residual data of one window in local coordinates, with a flag per record
/// marking sites inside the reference box.
pub struct WindowData {
    pub residuals: ObservationSet,
    pub in_ref: Vec<bool>,
    pub mean_fields: [MeanFieldFit; 2],
}

/// Selects the window's records (`x` = longitude, `y` = latitude, `t` = day
/// of year), removes the per-field mean field fitted on all days, and keeps
/// the residuals within `residual_days`.
pub fn prepare_window(bx: &GridBox, obs: &ObservationSet, days: (i64, i64)) -> Result<WindowData> {
    let inside: Vec<&Observation> = obs.records.iter().filter(|r| bx.contains_window(r.y, r.x)).collect();
    let mut fits = Vec::with_capacity(2);
    for f in 1..=2u8 {
        let recs: Vec<&&Observation> = inside.iter().filter(|r| r.field == f && r.t.is_some()).collect();
        let locs: Vec<[f64; 2]> = recs.iter().map(|r| bx.to_local(r.y, r.x)).collect();
        let t: Vec<f64> = recs.iter().map(|r| r.t.unwrap_or(0) as f64).collect();
        let v: Vec<f64> = recs.iter().map(|r| r.value).collect();
        let fit = fit_mean_field(&locs, &t, &v, [0.0, 0.0]).map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!("field {f} mean field: {m}")),
            Error::RankDeficient(m) => Error::RankDeficient(format!("field {f} mean field: {m}")),
            other => other,
        })?;
        fits.push(fit);
    }
    let mut records = Vec::new();
    let mut in_ref = Vec::new();
    for r in &inside {
        let Some(t) = r.t else { continue };
        if t < days.0 || t > days.1 {
            continue;
        }
        let loc = bx.to_local(r.y, r.x);
        let mf = &fits[usize::from(r.field - 1)];
        records.push(Observation {
            replicate: r.replicate,
            field: r.field,
            x: loc[0],
            y: loc[1],
            t: r.t,
            value: r.value - mf.eval(loc, t as f64),
            covariates: Vec::new(),
        });
        in_ref.push(bx.contains_ref(r.y, r.x));
    }
    let second = fits.pop().expect("two mean fields");
    let first = fits.pop().expect("two mean fields");
    Ok(WindowData {
        residuals: ObservationSet::new(records, Vec::new()),
        in_ref,
        mean_fields: [first, second],
    })
}

fn param_row(bx: &GridBox, spec: &ModelSpec, fit: Option<&FitResult>, status: &str, error: String) -> ParamRow {
    let p = fit.map(|f| f.params);
    let nig = |x: f64| if spec.kind == NoiseKind::Nig { p.map(|_| x) } else { None };
    ParamRow {
        box_id: bx.id,
        model: spec.name(),
        status: status.into(),
        kappa1: p.map(|p| p.model.kappa1),
        kappa2: p.map(|p| p.model.kappa2),
        sigma1: p.map(|p| p.model.sigma1),
        sigma2: p.map(|p| p.model.sigma2),
        rho: p.map(|p| p.model.rho),
        eta1: p.and_then(|p| nig(p.model.eta1)),
        eta2: p.and_then(|p| nig(p.model.eta2)),
        mu1: p.and_then(|p| nig(p.model.mu1)),
        mu2: p.and_then(|p| nig(p.model.mu2)),
        sigma_e1: p.map(|p| p.nugget.sigma_e1),
        sigma_e2: p.map(|p| p.nugget.sigma_e2),
        rho_e: p.map(|p| p.nugget.effective_rho()),
        loglik: fit.and_then(|f| f.loglik),
        converged: fit.map(|f| f.converged),
        error,
    }
}

fn fit_model(spec: &ModelSpec, data: &Dataset, config: &WindowsConfig, bx: &GridBox) -> Result<FitResult> {
    match spec.kind {
        NoiseKind::Gaussian => fit_gauss(
            data,
            None,
            &GaussFitOptions {
                structure: spec.structure,
                min_points: config.min_points,
                ..Default::default()
            },
        ),
        NoiseKind::Nig => {
            let opts = SgdOptions {
                structure: spec.structure,
                min_points: config.min_points,
                seed: config.sgd.seed.wrapping_add(config.seed).wrapping_add(bx.id as u64),
                ..config.sgd.clone()
            };
            Ok(fit_nig(data, None, &opts)?.fit)
        }
    }
}

/// Held-out predictive scores per field over the reference-box records.
fn score_model(
    spec: &ModelSpec,
    fit: &FitResult,
    data: &Dataset,
    wd: &WindowData,
    config: &WindowsConfig,
    bx: &GridBox,
) -> Result<Vec<ScoreRow>> {
    let reps = wd.residuals.replicates();
    // per field: (y, point prediction, crps, scrps)
    let mut acc: [Vec<(f64, f64, f64, f64)>; 2] = Default::default();
    for (r, rep) in reps.iter().enumerate() {
        let n1 = rep.fields[0].len();
        let mut held = Vec::new();
        for i in 0..rep.n_obs() {
            let src = if i < n1 { rep.fields[0].source[i] } else { rep.fields[1].source[i - n1] };
            if wd.in_ref[src] {
                held.push(i);
            }
        }
        if held.is_empty() {
            continue;
        }
        let y: Vec<f64> = held
            .iter()
            .map(|&i| if i < n1 { rep.fields[0].values[i] } else { rep.fields[1].values[i - n1] })
            .collect();
        match spec.kind {
            NoiseKind::Gaussian => {
                let m = loocv_gauss(fit, data, r, &held)?;
                for ((&i, &yi), &(mu, var)) in held.iter().zip(&y).zip(&m) {
                    let sd = var.sqrt();
                    acc[usize::from(i >= n1)].push((yi, mu, crps_gauss(mu, sd, yi)?, scrps_gauss(mu, sd, yi)?));
                }
            }
            NoiseKind::Nig => {
                let opts = PredictOptions {
                    seed: config.predict.seed.wrapping_add(config.seed).wrapping_add(bx.id as u64),
                    ..config.predict.clone()
                };
                let comps = loocv_nig(fit, data, r, &held, &opts)?;
                for ((&i, &yi), c) in held.iter().zip(&y).zip(&comps) {
                    let mu = c.iter().map(|p| p.0).sum::<f64>() / c.len() as f64;
                    let (a, b) = split_streams(c);
                    acc[usize::from(i >= n1)].push((yi, mu, crps_rb(&a, &b, yi)?, scrps_rb(&a, &b, yi)?));
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (k, pts) in acc.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let m: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let n = pts.len() as f64;
        rows.push(ScoreRow {
            box_id: bx.id,
            model: spec.name(),
            field: k + 1,
            n: pts.len(),
            rmse: rmse(&m, &y)?,
            mae: mae(&m, &y)?,
            crps: pts.iter().map(|p| p.2).sum::<f64>() / n,
            scrps: pts.iter().map(|p| p.3).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

/// Fits and scores every configured model in one window. Failures are
/// reported in the rows, never propagated.
pub fn process_window(bx: &GridBox, obs: &ObservationSet, config: &WindowsConfig) -> WindowReport {
    let (lat, lon) = bx.center();
    let mut report = WindowReport::default();
    let mut window = WindowRow {
        box_id: bx.id,
        lat,
        lon,
        n1: 0,
        n2: 0,
        status: "omitted".into(),
        reason: String::new(),
    };
    let omit = |mut window: WindowRow, reason: String, report: &mut WindowReport| {
        log::info!("event=window_omitted box={} reason=\"{reason}\"", window.box_id);
        window.reason = reason;
        report.windows.push(window);
        for spec in &config.models {
            report.params.push(param_row(bx, spec, None, "omitted", String::new()));
        }
    };
    let wd = match prepare_window(bx, obs, config.residual_days) {
        Ok(wd) => wd,
        Err(e) => {
            omit(window, e.to_string(), &mut report);
            return report;
        }
    };
    let counts = wd.residuals.field_counts();
    window.n1 = counts[0];
    window.n2 = counts[1];
    if let Some(k) = (0..2).find(|&k| counts[k] < config.min_points) {
        let reason = format!("field {} has {} observations, at least {} required", k + 1, counts[k], config.min_points);
        omit(window, reason, &mut report);
        return report;
    }
    let data = match config.window_mesh(bx).and_then(|mesh| Dataset::new(&mesh, &wd.residuals)) {
        Ok(d) => d,
        Err(e) => {
            omit(window, e.to_string(), &mut report);
            return report;
        }
    };
    window.status = "fitted".into();
    report.windows.push(window);
    for spec in &config.models {
        let outcome = fit_model(spec, &data, config, bx).and_then(|fit| {
            let scores = score_model(spec, &fit, &data, &wd, config, bx)?;
            Ok((fit, scores))
        });
        match outcome {
            Ok((fit, scores)) => {
                report.params.push(param_row(bx, spec, Some(&fit), "ok", String::new()));
                report.scores.extend(scores);
                if config.qq_simulations > 0 {
                    let seed = config.seed.wrapping_add(bx.id as u64);
                    match qq_envelope(&fit, spec.kind, &data.mesh, &wd.residuals, config.qq_simulations, config.qq_points, &config.qq_predict, seed) {
                        Ok(q) => {
                            for (k, pts) in q.iter().enumerate() {
                                report.qq.extend(pts.iter().map(|p| QqRow {
                                    box_id: bx.id,
                                    model: spec.name(),
                                    field: k + 1,
                                    prob: p.prob,
                                    observed: p.observed,
                                    env_lo: p.env_lo,
                                    env_median: p.env_median,
                                    env_hi: p.env_hi,
                                }));
                            }
                        }
                        Err(e) => log::warn!("event=qq_failed box={} model={} error=\"{e}\"", bx.id, spec.name()),
                    }
                }
            }
            Err(e) => {
                log::warn!("event=window_model_failed box={} model={} error=\"{e}\"", bx.id, spec.name());
                report.params.push(param_row(bx, spec, None, "failed", e.to_string()));
            }
        }
    }
    report
}

/// Processes every box of the configured grid in parallel; rows come back
/// in box order.
pub fn run_windows(obs: &ObservationSet, config: &WindowsConfig) -> Result<WindowReport> {
    config.validate()?;
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let grid = config.grid()?;
    let parts: Vec<WindowReport> = grid.par_iter().map(|bx| process_window(bx, obs, config)).collect();
    let mut out = WindowReport::default();
    for p in parts {
        out.windows.extend(p.windows);
        out.params.extend(p.params);
        out.scores.extend(p.scores);
        out.qq.extend(p.qq);
    }
    Ok(out)
}

pub const METRICS: [&str; 4] = ["rmse", "mae", "crps", "scrps"];

fn metric(row: &ScoreRow, name: &str) -> f64 {
    match name {
        "rmse" => row.rmse,
        "mae" => row.mae,
        "crps" => row.crps,
        _ => row.scrps,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalRow {
    pub model: String,
    pub field: usize,
    pub metric: String,
    pub value: f64,
    pub n_points: usize,
    pub n_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TallyRow {
    pub field: usize,
    pub metric: String,
    pub model: String,
    pub wins: usize,
}

/// `(box, field)` groups in which every listed model has a score.
fn common_groups(scores: &[ScoreRow]) -> BTreeMap<(usize, usize), Vec<&ScoreRow>> {
    let models: std::collections::BTreeSet<&str> = scores.iter().map(|s| s.model.as_str()).collect();
    let mut groups: BTreeMap<(usize, usize), Vec<&ScoreRow>> = BTreeMap::new();
    for s in scores {
        groups.entry((s.box_id, s.field)).or_default().push(s);
    }
    groups.retain(|_, v| v.len() == models.len());
    groups
}

/// Count-weighted averages of each metric (RMSE is pooled on the squared
/// scale) over the windows where every model was scored.
pub fn aggregate(scores: &[ScoreRow]) -> Vec<GlobalRow> {
    let mut acc: BTreeMap<(String, usize, &str), (f64, usize, usize)> = BTreeMap::new();
    for rows in common_groups(scores).values() {
        for s in rows {
            for m in METRICS {
                let v = metric(s, m);
                let term = if m == "rmse" { v * v } else { v };
                let e = acc.entry((s.model.clone(), s.field, m)).or_insert((0.0, 0, 0));
                e.0 += term * s.n as f64;
                e.1 += s.n;
                e.2 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|((model, field, m), (sum, n, w))| {
            let mean = sum / n as f64;
            GlobalRow {
                model,
                field,
                metric: m.into(),
                value: if m == "rmse" { mean.sqrt() } else { mean },
                n_points: n,
                n_windows: w,
            }
        })
        .collect()
}

/// Number of windows in which each model attains the smallest value of each
/// metric (ties go to the first model in name order).
pub fn best_model_counts(scores: &[ScoreRow]) -> Vec<TallyRow> {
    let mut wins: BTreeMap<(usize, &str, String), usize> = BTreeMap::new();
    let groups = common_groups(scores);
    let models: std::collections::BTreeSet<String> = scores.iter().map(|s| s.model.clone()).collect();
    for (&(_, field), rows) in &groups {
        for m in METRICS {
            let mut sorted = rows.clone();
            sorted.sort_by(|a, b| metric(a, m).total_cmp(&metric(b, m)).then(a.model.cmp(&b.model)));
            *wins.entry((field, m, sorted[0].model.clone())).or_insert(0) += 1;
        }
    }
    let fields: std::collections::BTreeSet<usize> = groups.keys().map(|k| k.1).collect();
    let mut out = Vec::new();
    for &field in &fields {
        for m in METRICS {
            for model in &models {
                out.push(TallyRow {
                    field,
                    metric: m.into(),
                    model: model.clone(),
                    wins: wins.get(&(field, m, model.clone())).copied().unwrap_or(0),
                });
            }
        }
    }
    out
}

/// Writes serializable rows as CSV. The header comes from the field names,
/// or from `header` when there are no rows.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], header: &[&str], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
