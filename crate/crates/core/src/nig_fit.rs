//! NIG model inference: a Gibbs sampler over the latent weights and mixing
//! variables, the Rao–Blackwellized stochastic gradient, multi-chain SGD,
//! and Monte Carlo prediction.

use crate::error::{Error, Result};
use crate::gaussian_fit::{beta_coef, fit_gauss, Dataset, FieldPrediction, FitResult, GaussFitOptions};
use crate::model::{build_operator, BivModelParams, LatentOperator, NoiseKind};
use crate::nig_dist::{gig_sample, GigParams};
use crate::noise::NuggetStructure;
use crate::params::{FullParams, ParamId, ParamLayout};
use crate::posterior::{conditional_score, projected_moments, Conditional, ReplicateSystem};
use crate::sparse::{SelectedInverse, SpdFactor};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Sampler state of one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub w: Vec<f64>,
    /// Mixing variables, strictly positive.
    pub v: Vec<f64>,
    /// Conditional mean of `w` given the current `v`.
    pub xi_hat: Vec<f64>,
}

/// Latent mean `μ (v − h)` and its derivatives with respect to `μ₁`, `μ₂`.
pub(crate) fn latent_mean(op: &LatentOperator, model: &BivModelParams, v: &[f64]) -> (Vec<f64>, [Vec<f64>; 2]) {
    let n = op.n;
    let mut m = vec![0.0; 2 * n];
    let mut dm = [vec![0.0; 2 * n], vec![0.0; 2 * n]];
    for i in 0..2 * n {
        let f = i / n;
        let d = v[i] - op.h2[i];
        m[i] = model.mu(f) * d;
        dm[f][i] = d;
    }
    (m, dm)
}

impl GibbsState {
    /// `v = h` and `w` at the Gaussian conditional mean.
    pub fn initial(sys: &ReplicateSystem, op: &LatentOperator, p: &FullParams, coef: &DVector<f64>) -> Result<Self> {
        let v = op.h2.clone();
        let cond = Conditional::new(sys, op, &p.nugget, &v, None)?;
        let xi = cond.mean(coef);
        Ok(Self {
            w: xi.clone(),
            v,
            xi_hat: xi,
        })
    }
}

/// Draws each `v_i` from its full conditional given `w`:
/// GIG with `p = −1`, `a = η + μ²`, `b = (e_i + μ h_i)² + η h_i²`, `e = K w`.
pub fn update_v<R: Rng + ?Sized>(w: &[f64], op: &LatentOperator, model: &BivModelParams, rng: &mut R) -> Result<Vec<f64>> {
    let e = op.k.mul_vec(w)?;
    let n = op.n;
    let mut v = Vec::with_capacity(2 * n);
    for (i, &ei) in e.iter().enumerate() {
        let f = i / n;
        let (eta, mu, h) = (model.eta(f), model.mu(f), op.h2[i]);
        let r = ei + mu * h;
        let g = GigParams::new(-1.0, eta + mu * mu, r * r + eta * h * h)?;
        v.push(gig_sample(&g, rng));
    }
    Ok(v)
}

/// One sweep: `v | w` first, then `w | v, Y ~ N(ξ̂, Q̂⁻¹)` with
/// `Q̂ = Kᵀ diag(v)⁻¹ K + Aᵀ Q_ε A`. Returns the conditional at the new `v`,
/// which the Rao–Blackwellized estimators reuse.
pub fn gibbs_step<R: Rng + ?Sized>(
    state: &mut GibbsState,
    sys: &ReplicateSystem,
    op: &LatentOperator,
    p: &FullParams,
    coef: &DVector<f64>,
    rng: &mut R,
) -> Result<Conditional> {
    let v = update_v(&state.w, op, &p.model, rng)?;
    let (m, _) = latent_mean(op, &p.model, &v);
    let cond = Conditional::new(sys, op, &p.nugget, &v, Some(&m))?;
    let xi = cond.mean(coef);
    let z = cond.factor.sample(rng);
    state.w = xi.iter().zip(&z).map(|(a, b)| a + b).collect();
    state.v = v;
    state.xi_hat = xi;
    Ok(cond)
}

/// Gradient of `log p(Y, v)` averaged over `w | v, Y`, indexed by
/// [`ParamId`] (working scale), plus the gradient for `β`.
#[allow(clippy::too_many_arguments)]
pub fn rb_gradient(
    sys: &ReplicateSystem,
    op: &LatentOperator,
    fb: &[SpdFactor; 2],
    p: &FullParams,
    v: &[f64],
    cond: &Conditional,
    coef: &DVector<f64>,
    with_theta: bool,
) -> Result<([f64; 13], Vec<f64>)> {
    let (m, dm) = latent_mean(op, &p.model, v);
    let (mut g, xi) = conditional_score(
        sys,
        op,
        fb,
        &p.nugget,
        v,
        Some((&m, [&dm[0], &dm[1]])),
        cond,
        coef,
        with_theta,
    )?;
    let n = op.n;
    for (f, id) in [ParamId::Eta1, ParamId::Eta2].into_iter().enumerate() {
        let eta = p.model.eta(f);
        let mut s = 0.0;
        for i in f * n..(f + 1) * n {
            let h = op.h2[i];
            s += 0.5 / eta - 0.5 * (v[i] + h * h / v[i]) + h;
        }
        g[id.index()] = eta * s;
    }
    if p.nugget.structure == NuggetStructure::Diagonal {
        g[ParamId::RhoE.index()] = 0.0;
    }
    // βᵀ: Bᵀ Q_ε (Y − A ξ − B β)
    let r = coef.len();
    let mut gb = Vec::with_capacity(r - 1);
    if r > 1 {
        let xiv = DVector::from_vec(xi);
        let full = &cond.rtqr * coef - cond.atqr.transpose() * xiv;
        gb.extend(full.iter().skip(1).copied());
    }
    Ok((g, gb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdOptions {
    pub chains: usize,
    pub iterations: usize,
    /// Gibbs sweeps (and gradient samples) per iteration and replicate.
    pub gibbs_samples_per_iter: usize,
    pub lambda0: f64,
    pub decay: f64,
    pub offset: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub structure: NuggetStructure,
    pub fit_theta: bool,
    pub fixed: Vec<ParamId>,
    pub min_points: usize,
    /// Start from a Gaussian fit (with `η = 1`, `μ = 0`).
    pub init_from_gaussian: bool,
    /// Abort a chain when a working parameter leaves `[−bound, bound]`.
    pub divergence_bound: f64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 10_000,
            gibbs_samples_per_iter: 1,
            lambda0: 0.05,
            decay: 0.6,
            offset: 1000.0,
            checkpoint_interval: 500,
            seed: 0,
            structure: NuggetStructure::General,
            fit_theta: false,
            fixed: Vec::new(),
            min_points: 100,
            init_from_gaussian: true,
            divergence_bound: 30.0,
        }
    }
}

impl SgdOptions {
    /// `λ_i = λ₀ (1 + i/τ)^(−decay)`.
    pub fn step(&self, i: usize) -> f64 {
        self.lambda0 * (1.0 + i as f64 / self.offset).powf(-self.decay)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations == 0 || self.gibbs_samples_per_iter == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("chains, iterations, samples and checkpoint interval must be positive".into()));
        }
        // Σλ = ∞ and Σλ² < ∞
        if !(self.decay > 0.5 && self.decay <= 1.0) || self.lambda0 <= 0.0 || self.offset <= 0.0 {
            return Err(Error::Config(format!(
                "step schedule needs lambda0 > 0, offset > 0 and decay in (0.5, 1], got decay = {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// Checkpoint record of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub chain: usize,
    pub values: Vec<f64>,
    /// Across-chain SD of each value at this checkpoint.
    pub sd: Vec<f64>,
}

/// Result of [`fit_nig`]: the estimate and the checkpoint trace.
#[derive(Clone, Debug)]
pub struct NigFit {
    pub fit: FitResult,
    /// Names of the traced values (working parameters, then `β`).
    pub names: Vec<String>,
    pub checkpoints: Vec<Checkpoint>,
}

struct ChainRun {
    checkpoints: Vec<(usize, Vec<f64>)>,
    tail_mean: Vec<f64>,
}

fn nig_layout(opts: &SgdOptions) -> ParamLayout {
    ParamLayout::for_model(NoiseKind::Nig, opts.structure, opts.fit_theta, &opts.fixed)
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    data: &Dataset,
    layout: &ParamLayout,
    base: &FullParams,
    x0: &[f64],
    opts: &SgdOptions,
    chain: usize,
) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(chain as u64);
    let dim = x0.len();
    let k = layout.len();
    let mut x = x0.to_vec();
    let mut ms = vec![0.0; dim];
    let mut states: Option<Vec<GibbsState>> = None;
    let mut checkpoints = Vec::new();
    let tail_start = opts.iterations - opts.iterations.min(opts.checkpoint_interval);
    let mut tail_sum = vec![0.0; dim];
    let mut tail_n = 0usize;
    for it in 0..opts.iterations {
        let p = layout.from_working(&x[..k], base)?;
        let beta = &x[k..];
        let op = build_operator(&p.model, &data.fem)?;
        let fb = op.factor_b()?;
        let st = match states.as_mut() {
            Some(s) => s,
            None => {
                let init = data
                    .systems
                    .iter()
                    .map(|sys| GibbsState::initial(sys, &op, &p, &beta_coef(beta, sys.n_resp())?))
                    .collect::<Result<Vec<_>>>()?;
                states.insert(init)
            }
        };
        let mut g = vec![0.0; dim];
        let ns = opts.gibbs_samples_per_iter as f64;
        for (sys, state) in data.systems.iter().zip(st.iter_mut()) {
            let coef = beta_coef(beta, sys.n_resp())?;
            for _ in 0..opts.gibbs_samples_per_iter {
                let cond = gibbs_step(state, sys, &op, &p, &coef, &mut rng)?;
                let (gf, gb) = rb_gradient(sys, &op, &fb, &p, &state.v, &cond, &coef, opts.fit_theta)?;
                for (j, v) in layout.select(&gf).into_iter().enumerate() {
                    g[j] += v / ns;
                }
                for (j, v) in gb.into_iter().enumerate() {
                    g[k + j] += v / ns;
                }
            }
        }
        let lambda = opts.step(it);
        for j in 0..dim {
            ms[j] = if it == 0 { g[j] * g[j] } else { 0.9 * ms[j] + 0.1 * g[j] * g[j] };
            let rms = ms[j].sqrt().clamp(1e-3, 1e3);
            x[j] += lambda * g[j] / rms;
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite() || v.abs() > opts.divergence_bound) {
            return Err(Error::Diverged {
                chain,
                iteration: it,
                message: format!("working parameter {j} reached {}", x[j]),
            });
        }
        if it >= tail_start {
            tail_sum.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
            tail_n += 1;
        }
        if (it + 1) % opts.checkpoint_interval == 0 || it + 1 == opts.iterations {
            checkpoints.push((it + 1, x.clone()));
            log::debug!("event=sgd_checkpoint chain={chain} iteration={} values={:?}", it + 1, x);
        }
    }
    Ok(ChainRun {
        checkpoints,
        tail_mean: tail_sum.iter().map(|s| s / tail_n as f64).collect(),
    })
}

fn mean_sd(rows: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let c = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / c).collect();
    let sd = (0..d)
        .map(|j| {
            if rows.len() < 2 {
                0.0
            } else {
                (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (c - 1.0)).sqrt()
            }
        })
        .collect();
    (mean, sd)
}

/// Multi-chain stochastic gradient ascent on the NIG likelihood.
///
/// The estimate is the across-chain average of each chain's mean over its
/// final checkpoint interval. Diverged chains are dropped with a warning; the
/// call fails only when every chain diverges.
pub fn fit_nig(data: &Dataset, init: Option<FullParams>, opts: &SgdOptions) -> Result<NigFit> {
    opts.validate()?;
    data.check_min_points(opts.min_points)?;
    let mut base = match init {
        Some(p) => p,
        None if opts.init_from_gaussian => {
            let g = fit_gauss(
                data,
                None,
                &GaussFitOptions {
                    structure: opts.structure,
                    min_points: opts.min_points,
                    ..Default::default()
                },
            )?;
            let m = g.params.model;
            FullParams::new(
                BivModelParams::nig(m.kappa1, m.kappa2, m.sigma1, m.sigma2, m.rho, 0.0, [1.0, 1.0], [0.0, 0.0]),
                g.params.nugget,
            )
        }
        None => data.initial_params(NoiseKind::Nig, opts.structure),
    };
    base.model.kind = NoiseKind::Nig;
    base.nugget.structure = opts.structure;
    if opts.structure == NuggetStructure::Diagonal {
        base.nugget.rho_e = 0.0;
    }
    base.validate()?;
    let layout = nig_layout(opts);
    let n_beta = 2 * data.n_cov;
    let mut x0 = layout.to_working(&base);
    x0.extend(std::iter::repeat_n(0.0, n_beta));
    let runs: Vec<Result<ChainRun>> = (0..opts.chains)
        .into_par_iter()
        .map(|c| run_chain(data, &layout, &base, &x0, opts, c))
        .collect();
    let mut ok = Vec::new();
    let mut last_err = None;
    for (c, r) in runs.into_iter().enumerate() {
        match r {
            Ok(run) => ok.push((c, run)),
            Err(e) => {
                log::warn!("event=sgd_chain_failed chain={c} error=\"{e}\"");
                last_err = Some(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Config("no chains".into())));
    }
    let mut names: Vec<String> = layout.names().into_iter().map(String::from).collect();
    names.extend((0..n_beta).map(|j| format!("beta{}", j + 1)));
    let mut checkpoints = Vec::new();
    let mut trace = Vec::new();
    let n_ck = ok[0].1.checkpoints.len();
    let mut last_sd = vec![0.0; x0.len()];
    for i in 0..n_ck {
        let rows: Vec<&Vec<f64>> = ok.iter().map(|(_, r)| &r.checkpoints[i].1).collect();
        let (mean, sd) = mean_sd(&rows);
        for (c, r) in &ok {
            checkpoints.push(Checkpoint {
                iteration: r.checkpoints[i].0,
                chain: *c,
                values: r.checkpoints[i].1.clone(),
                sd: sd.clone(),
            });
        }
        trace.push(mean);
        last_sd = sd;
    }
    let tails: Vec<&Vec<f64>> = ok.iter().map(|(_, r)| &r.tail_mean).collect();
    let (est, _) = mean_sd(&tails);
    let k = layout.len();
    let params = layout.from_working(&est[..k], &base)?;
    let converged = ok.len() == opts.chains && last_sd.iter().all(|s| *s < 0.1);
    Ok(NigFit {
        fit: FitResult {
            params,
            beta: est[k..].to_vec(),
            loglik: None,
            iterations: opts.iterations,
            converged,
            param_names: names.clone(),
            trace,
            std_errors: None,
            chain_sd: Some(last_sd),
        },
        names,
        checkpoints,
    })
}

/// Writes the checkpoint trace as CSV: `iteration, chain, <values>, sd_<values>`.
pub fn write_trace<W: Write>(fit: &NigFit, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string(), "chain".to_string()];
    header.extend(fit.names.iter().cloned());
    header.extend(fit.names.iter().map(|n| format!("sd_{n}")));
    w.write_record(&header)?;
    for c in &fit.checkpoints {
        let mut row = vec![c.iteration.to_string(), c.chain.to_string()];
        row.extend(c.values.iter().map(|v| v.to_string()));
        row.extend(c.sd.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    /// Gibbs sweeps, burn-in included.
    pub samples: usize,
    pub burn_in: f64,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            samples: 500,
            burn_in: 0.2,
            seed: 0,
        }
    }
}

/// Monte Carlo prediction of both latent fields.
#[derive(Clone, Debug, Default)]
pub struct NigPrediction {
    /// Rao–Blackwellized mean and law-of-total-variance variance.
    pub fields: [FieldPrediction; 2],
    /// Average of the conditional variances alone.
    pub var_within: [Vec<f64>; 2],
    /// Per kept sample: conditional (mean, variance) at each site, `[field][sample][site]`.
    pub components: [Vec<Vec<(f64, f64)>>; 2],
}

/// Runs a Gibbs chain at the fitted parameters and averages the conditional
/// moments of `A₀ w` over the kept sweeps.
pub fn predict_nig(
    fit: &FitResult,
    data: &Dataset,
    replicate: usize,
    new_locations: [&[[f64; 2]]; 2],
    opts: &PredictOptions,
) -> Result<NigPrediction> {
    let p = &fit.params;
    let sys = data
        .systems
        .get(replicate)
        .ok_or_else(|| Error::InvalidParameter(format!("replicate index {replicate} out of range")))?;
    let burn = (opts.samples as f64 * opts.burn_in).floor() as usize;
    if opts.samples <= burn {
        return Err(Error::Config("no samples left after burn-in".into()));
    }
    let op = build_operator(&p.model, &data.fem)?;
    let coef = beta_coef(&fit.beta, sys.n_resp())?;
    let mut state = GibbsState::initial(sys, &op, p, &coef)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = NigPrediction::default();
    for s in 0..opts.samples {
        let cond = gibbs_step(&mut state, sys, &op, p, &coef, &mut rng)?;
        if s < burn {
            continue;
        }
        let sel = SelectedInverse::new(&cond.factor);
        for k in 0..2 {
            let (m, v) = projected_moments(&data.mesh, new_locations[k], k, &state.xi_hat, &sel)?;
            out.components[k].push(m.into_iter().zip(v).collect());
        }
    }
    let kept = (opts.samples - burn) as f64;
    for k in 0..2 {
        let sites = new_locations[k].len();
        let mut mean = vec![0.0; sites];
        let mut within = vec![0.0; sites];
        for comp in &out.components[k] {
            for (i, &(m, v)) in comp.iter().enumerate() {
                mean[i] += m / kept;
                within[i] += v / kept;
            }
        }
        let mut total = within.clone();
        for comp in &out.components[k] {
            for (i, &(m, _)) in comp.iter().enumerate() {
                total[i] += (m - mean[i]).powi(2) / kept;
            }
        }
        out.fields[k] = FieldPrediction { mean, var: total };
        out.var_within[k] = within;
    }
    Ok(out)
}
