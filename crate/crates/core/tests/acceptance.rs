//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Run a subset by passing criterion numbers:
//! `cargo test --test acceptance -- 1 2 7`.

use bispde::experiments::{run_sim_study, Cell, SimRow, SimStudyConfig, RHO_E_GRID, RHO_GRID};
use bispde::gaussian_fit::{loglik_gauss, predict_gauss, Dataset, FitResult};
use bispde::mesh_fem::{assemble_fem, make_rect_mesh, projector, TriMesh};
use bispde::model::{build_operator, dep_matrix, pearson_corr_raw, BivModelParams, NoiseKind};
use bispde::nig_dist::IgParams;
use bispde::nig_fit::{gibbs_step, predict_nig, rb_gradient, GibbsState, PredictOptions};
use bispde::noise::{nugget_precision, NuggetLayout, NuggetParams, NuggetStructure};
use bispde::obs::{FieldData, ObservationSet, Replicate};
use bispde::params::{from_working_scalar, to_working_scalar, FullParams, ParamId};
use bispde::posterior::ReplicateSystem;
use bispde::scoring::{crps_gauss, crps_rb, rb_terms, scrps_gauss, scrps_rb, split_streams};
use bispde::windows::mean_field::{design_row, fit_mean_field, N_COEF};
use bispde::windows::{run_windows, synthetic_observations, ModelSpec, SyntheticConfig, WindowsConfig};
use bispde::{SelectedInverse, SparseMat, SpdFactor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn median(mut x: Vec<f64>) -> f64 {
    x.retain(|v| v.is_finite());
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::double_exponential::integrate(f, a, b, 1e-12).integral
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Replicate on the unit square: `pairs` co-located sites, then `extra[k]`
/// lone sites of field `k`, with standard normal values.
fn random_replicate(rng: &mut ChaCha8Rng, id: i64, pairs: usize, extra: [usize; 2], scale: f64) -> Replicate {
    let mut fields: [FieldData; 2] = Default::default();
    let site = |rng: &mut ChaCha8Rng| [scale * rng.random::<f64>(), scale * rng.random::<f64>()];
    for _ in 0..pairs {
        let s = site(rng);
        for f in fields.iter_mut() {
            f.push(s, rng.sample(StandardNormal));
        }
    }
    for k in 0..2 {
        for _ in 0..extra[k] {
            let s = site(rng);
            fields[k].push(s, rng.sample(StandardNormal));
        }
    }
    Replicate { id, fields }
}

fn dense_loglik(mesh: &TriMesh, reps: &[Replicate], p: &FullParams) -> f64 {
    let fem = assemble_fem(mesh).unwrap();
    let op = build_operator(&p.model, &fem).unwrap();
    let cov_x = op.qx.to_dense().cholesky().unwrap().inverse();
    let mut total = 0.0;
    for r in reps {
        let a1 = projector(mesh, &r.fields[0].locs).unwrap();
        let a2 = projector(mesh, &r.fields[1].locs).unwrap();
        let a = SparseMat::block_diag(&[&a1, &a2]).to_dense();
        let layout = NuggetLayout::from_locations(&r.fields[0].locs, &r.fields[1].locs);
        let qe = nugget_precision(&p.nugget, &layout).unwrap().to_dense();
        let s = &a * &cov_x * a.transpose() + qe.cholesky().unwrap().inverse();
        let y = DVector::from_vec(r.stacked_values());
        let ch = s.cholesky().unwrap();
        let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = y.dot(&ch.solve(&y));
        total += -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    }
    total
}

fn c1_dense_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let instances = 25;
    for i in 0..instances {
        let nx = rng.random_range(3..=5);
        let ny = rng.random_range(3..=6).min(30 / nx);
        let scale = rng.random_range(0.5..5.0);
        let mesh = make_rect_mesh((0.0, scale), (0.0, scale), nx, ny).unwrap();
        let n_reps = rng.random_range(1..=2);
        let reps: Vec<Replicate> = (0..n_reps)
            .map(|r| {
                let pairs = rng.random_range(0..=6);
                let extra = [rng.random_range(1..=4), rng.random_range(0..=4)];
                random_replicate(&mut rng, r, pairs, extra, scale)
            })
            .collect();
        let structure = if i % 2 == 0 {
            NuggetStructure::General
        } else {
            NuggetStructure::Diagonal
        };
        let p = FullParams::new(
            BivModelParams::gaussian(
                rng.random_range(0.5..6.0) / scale,
                rng.random_range(0.5..6.0) / scale,
                rng.random_range(0.3..2.0),
                rng.random_range(0.3..2.0),
                rng.random_range(-2.0..2.0),
            ),
            NuggetParams::new(
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(-0.9..0.9),
                structure,
            ),
        );
        let n_obs: usize = reps.iter().map(|r| r.n_obs()).sum();
        assert!(mesh.n_vertices() <= 30 && n_obs <= 40);
        let data = Dataset::new(&mesh, &ObservationSet::from_replicates(&reps, vec![])).unwrap();
        let ll = loglik_gauss(&data, &p).unwrap();
        let dense = dense_loglik(&mesh, &reps, &p);
        worst = worst.max((ll - dense).abs());
    }
    check(worst < 1e-8, format!("{instances} instances, max |sparse − dense| = {worst:.2e}"))
}

/// `∫₀^∞ r dr / ((a² + r²)(b² + r²))` by quadrature on `r = t / (1 − t)`.
fn radial(a: f64, b: f64) -> f64 {
    integrate(
        |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let r = t / (1.0 - t);
            let jac = 1.0 / ((1.0 - t) * (1.0 - t));
            r / ((a * a + r * r) * (b * b + r * r)) * jac
        },
        0.0,
        1.0,
    )
}

fn c2_pearson() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut worst_branch: f64 = 0.0;
    for _ in 0..50 {
        let (k1, k2, rho) = (
            rng.random_range(0.2..6.0),
            rng.random_range(0.2..6.0),
            rng.random_range(-3.0..3.0),
        );
        // covariance of D⁻¹ W is D⁻¹ D⁻ᵀ
        let d = dep_matrix(0.0, rho);
        let dm = DMatrix::from_row_slice(2, 2, &[d[0][0], d[0][1], d[1][0], d[1][1]]);
        let di = dm.try_inverse().unwrap();
        let m = &di * di.transpose();
        let quad = m[(0, 1)] * radial(k1, k2) / (m[(0, 0)] * m[(1, 1)] * radial(k1, k1) * radial(k2, k2)).sqrt();
        worst = worst.max((pearson_corr_raw(k1, k2, rho) - quad).abs());
        let near = pearson_corr_raw(k1, k1 + 1e-6, rho);
        worst_branch = worst_branch.max((near - pearson_corr_raw(k1, k1, rho)).abs());
    }
    check(
        worst < 1e-6 && worst_branch < 1e-5,
        format!("50 triples, max |closed form − quadrature| = {worst:.2e}, branch gap = {worst_branch:.2e}"),
    )
}

fn study_rows(cells: Vec<Cell>) -> Vec<SimRow> {
    let config = SimStudyConfig {
        cells,
        ..Default::default()
    };
    run_sim_study(&config).expect("simulation study runs")
}

fn c3_sim_bias() -> Outcome {
    let rows = study_rows(vec![Cell { rho: 0.0, rho_e: -0.8 }]);
    let pick = |s: &str| median(rows.iter().filter(|r| r.structure == s).map(|r| r.rho_hat).collect());
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    let (diag, gen) = (pick("diagonal"), pick("general"));
    check(
        (-0.7..=-0.3).contains(&diag) && gen.abs() <= 0.15 && failed == 0,
        format!("median rho_hat: diagonal {diag:.3}, general {gen:.3}; failed fits {failed}"),
    )
}

fn c4_snr() -> Outcome {
    let cells: Vec<Cell> = RHO_GRID
        .iter()
        .flat_map(|&rho| {
            RHO_E_GRID
                .iter()
                .filter(|r| r.abs() <= 0.4)
                .map(move |&rho_e| Cell { rho, rho_e })
        })
        .collect();
    let n_cells = cells.len();
    let rows = study_rows(cells.clone());
    let mut worst: (f64, String) = (0.0, String::new());
    let mut by_structure = [0.0f64; 2];
    for c in &cells {
        for (j, s) in ["diagonal", "general"].into_iter().enumerate() {
            let sel: Vec<&SimRow> = rows
                .iter()
                .filter(|r| r.rho == c.rho && r.rho_e == c.rho_e && r.structure == s)
                .collect();
            let truth = sel[0].snr1_true;
            let m = median(sel.iter().map(|r| r.snr1).collect());
            let rel = (m / truth - 1.0).abs();
            by_structure[j] = by_structure[j].max(rel);
            if !(rel <= worst.0) {
                worst = (rel, format!("rho={} rho_e={} {s}: median {m:.3} vs {truth:.3}", c.rho, c.rho_e));
            }
        }
    }
    check(
        worst.0 <= 0.2,
        format!(
            "{n_cells} cells x 2 structures, worst relative error {:.3} ({}); diagonal {:.3}, general {:.3}",
            worst.0, worst.1, by_structure[0], by_structure[1]
        ),
    )
}

fn tiny_nig_case(eta: f64, seed: u64) -> (TriMesh, Replicate, FullParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = make_rect_mesh((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap();
    let rep = random_replicate(&mut rng, 0, 4, [3, 2], 1.0);
    let p = FullParams::new(
        BivModelParams::nig(3.0, 4.0, 1.0, 0.8, 0.4, 0.0, [eta, eta], [0.0, 0.0]),
        NuggetParams::new(0.4, 0.5, 0.3, NuggetStructure::General),
    );
    (mesh, rep, p)
}

fn as_gaussian(p: &FullParams) -> FullParams {
    let m = p.model;
    FullParams::new(BivModelParams::gaussian(m.kappa1, m.kappa2, m.sigma1, m.sigma2, m.rho), p.nugget)
}

fn fit_at(params: FullParams) -> FitResult {
    FitResult {
        params,
        beta: vec![],
        loglik: None,
        iterations: 0,
        converged: true,
        param_names: vec![],
        trace: vec![],
        std_errors: None,
        chain_sd: None,
    }
}

fn c5_gaussian_limit() -> Outcome {
    let mut worst_pred: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let targets = [[0.2, 0.8], [0.5, 0.5], [0.9, 0.3]];
    for case in 0..3 {
        let (mesh, rep, p) = tiny_nig_case(1e6, 500 + case);
        let data = Dataset::new(&mesh, &ObservationSet::from_replicates(std::slice::from_ref(&rep), vec![])).unwrap();
        let gauss = predict_gauss(&fit_at(as_gaussian(&p)), &data, 0, [&targets, &targets]).unwrap();
        let runs: Vec<_> = (0..20)
            .map(|seed| {
                let opts = PredictOptions {
                    samples: 200,
                    burn_in: 0.2,
                    seed,
                };
                predict_nig(&fit_at(p), &data, 0, [&targets, &targets], &opts).unwrap()
            })
            .collect();
        for k in 0..2 {
            for i in 0..targets.len() {
                let means: Vec<f64> = runs.iter().map(|r| r.fields[k].mean[i]).collect();
                let (m, sd) = mean_sd(&means);
                let se = sd / (means.len() as f64).sqrt();
                worst_pred = worst_pred.max((m - gauss[k].mean[i]).abs() / se.max(1e-14));
            }
        }

        // RB gradient along independent chains against differences of the Gaussian likelihood
        let fem = assemble_fem(&mesh).unwrap();
        let op = build_operator(&p.model, &fem).unwrap();
        let fb = op.factor_b().unwrap();
        let sys = ReplicateSystem::new(&mesh, &rep, 0).unwrap();
        let coef = DVector::from_element(1, 1.0);
        let ids = [
            ParamId::Kappa1,
            ParamId::Kappa2,
            ParamId::Sigma1,
            ParamId::Sigma2,
            ParamId::Rho,
            ParamId::SigmaE1,
            ParamId::SigmaE2,
            ParamId::RhoE,
        ];
        let mut chain_means = vec![Vec::new(); ids.len()];
        for chain in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(chain);
            let mut st = GibbsState::initial(&sys, &op, &p, &coef).unwrap();
            let mut acc = vec![0.0; ids.len()];
            for s in 0..120 {
                let cond = gibbs_step(&mut st, &sys, &op, &p, &coef, &mut rng).unwrap();
                if s >= 20 {
                    let g = rb_gradient(&sys, &op, &fb, &p, &st.v, &cond, &coef, false).unwrap().0;
                    for (j, id) in ids.iter().enumerate() {
                        acc[j] += g[id.index()] / 100.0;
                    }
                }
            }
            for j in 0..ids.len() {
                chain_means[j].push(acc[j]);
            }
        }
        let gp = as_gaussian(&p);
        for (j, &id) in ids.iter().enumerate() {
            let h = 1e-5;
            let w0 = to_working_scalar(id, gp.get(id));
            let (mut a, mut b) = (gp, gp);
            a.set(id, from_working_scalar(id, w0 + h));
            b.set(id, from_working_scalar(id, w0 - h));
            let fd = (loglik_gauss(&data, &a).unwrap() - loglik_gauss(&data, &b).unwrap()) / (2.0 * h);
            let (m, sd) = mean_sd(&chain_means[j]);
            let se = sd / (chain_means[j].len() as f64).sqrt();
            worst_grad = worst_grad.max((m - fd).abs() / se.max(1e-14));
        }
    }
    check(
        worst_pred <= 3.0 && worst_grad <= 2.0,
        format!("max |NIG − kriging| = {worst_pred:.2} SE, max |RB − FD| = {worst_grad:.2} SE"),
    )
}

/// Mean and variance of `v_i | w` on a 2000-point logarithmic grid.
fn grid_moments(e: f64, h: f64, eta: f64, mu: f64) -> (f64, f64) {
    let prior = IgParams::mixing(eta, h).unwrap();
    let ln_k = |v: f64| {
        let r = e - mu * (v - h);
        prior.ln_pdf(v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * r * r / v
    };
    // locate the bulk on a coarse scan, then integrate in u = ln v
    let coarse: Vec<f64> = (0..4000).map(|i| (h * 1e-8).ln() + i as f64 * (1e16f64.ln() / 3999.0)).collect();
    let vals: Vec<f64> = coarse.iter().map(|&u| ln_k(u.exp()) + u).collect();
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..coarse.len()).filter(|&i| vals[i] > top - 60.0).collect();
    let (lo, hi) = (coarse[keep[0].saturating_sub(1)], coarse[(keep[keep.len() - 1] + 1).min(coarse.len() - 1)]);
    let n = 2000;
    let du = (hi - lo) / (n - 1) as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let u = lo + i as f64 * du;
        let v = u.exp();
        let w = (ln_k(v) + u - top).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        z += w;
        m1 += w * v;
        m2 += w * v * v;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

fn c6_gig_conditional() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    let draws: usize = std::env::var("C6_DRAWS").ok().and_then(|v| v.parse().ok()).unwrap_or(1_000_000);
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + inst);
        // the relative Monte Carlo error of a GIG(−1, a, b) sample variance
        // grows fast as √(ab) falls; an 8 × 8 domain with η ≥ 0.5 keeps
        // √(ab) above 1.3, where a million draws put 2% near five standard errors
        let mesh = make_rect_mesh((0.0, 8.0), (0.0, 8.0), 3, 3).unwrap();
        let rep = random_replicate(&mut rng, 0, 3, [2, 2], 8.0);
        let p = FullParams::new(
            BivModelParams::nig(
                rng.random_range(1.0..4.0),
                rng.random_range(1.0..4.0),
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
                rng.random_range(-1.0..1.0),
                0.0,
                [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            ),
            NuggetParams::new(0.4, 0.4, 0.2, NuggetStructure::General),
        );
        let fem = assemble_fem(&mesh).unwrap();
        let op = build_operator(&p.model, &fem).unwrap();
        let sys = ReplicateSystem::new(&mesh, &rep, 0).unwrap();
        let coef = DVector::from_element(1, 1.0);
        let mut base = GibbsState::initial(&sys, &op, &p, &coef).unwrap();
        for _ in 0..5 {
            gibbs_step(&mut base, &sys, &op, &p, &coef, &mut rng).unwrap();
        }
        let e = op.apply_k(&base.w).unwrap();
        let dim = 2 * op.n;
        // Welford accumulators per component
        let (mut cnt, mut mean, mut m2) = (0.0, vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..draws {
            let mut st = base.clone();
            gibbs_step(&mut st, &sys, &op, &p, &coef, &mut rng).unwrap();
            cnt += 1.0;
            for i in 0..dim {
                let d = st.v[i] - mean[i];
                mean[i] += d / cnt;
                m2[i] += d * (st.v[i] - mean[i]);
            }
        }
        for i in 0..dim {
            let f = i / op.n;
            let (gm, gv) = grid_moments(e[i], op.h2[i], p.model.eta(f), p.model.mu(f));
            let var = m2[i] / (cnt - 1.0);
            let rel = ((mean[i] - gm) / gm).abs().max(((var - gv) / gv).abs());
            if rel > worst {
                worst = rel;
                let (eta, mu, h) = (p.model.eta(f), p.model.mu(f), op.h2[i]);
                let (a, b) = (eta + mu * mu, (e[i] + mu * h).powi(2) + eta * h * h);
                where_ = format!(
                    "instance {inst} component {i} (a {a:.6}, b {b:.6}): mean {:.4e}/{gm:.4e}, var {var:.4e}/{gv:.4e}",
                    mean[i]
                );
            }
        }
    }
    check(
        worst <= 0.02,
        format!("10 instances, worst relative moment error {worst:.4} ({where_})"),
    )
}

/// Integral over `[a, b]` split at every break point inside it.
fn piecewise(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.windows(2).map(|w| integrate(&f, w[0], w[1])).sum()
}

/// CRPS and SCRPS of `N(μ, σ²)` at `y` straight from their integral definitions.
fn scores_by_quadrature(mu: f64, sigma: f64, y: f64) -> (f64, f64) {
    let cdf = |x: f64| normal_cdf((x - mu) / sigma);
    let (lo, hi) = (mu - 40.0 * sigma, mu + 40.0 * sigma);
    let (a, b) = (lo.min(y), hi.max(y));
    let breaks: Vec<f64> = [-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0].iter().map(|k| mu + k * sigma).chain([y]).collect();
    let crps = piecewise(|x| cdf(x).powi(2), a, y, &breaks) + piecewise(|x| (1.0 - cdf(x)).powi(2), y, b, &breaks);
    let abs_y = piecewise(|x| (x - y).abs() * normal_pdf((x - mu) / sigma) / sigma, lo, hi, &breaks);
    // E|X − X'| = 2 ∫ F (1 − F)
    let spread = 2.0 * piecewise(|x| cdf(x) * (1.0 - cdf(x)), lo, hi, &breaks);
    (crps, abs_y / spread + 0.5 * spread.ln())
}

fn c7_scoring() -> Outcome {
    let mus = [-3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0];
    let sigmas = [0.1, 0.3, 0.7, 1.0, 1.5, 3.0, 10.0];
    let ys = [-5.0, -2.0, -0.5, 0.0, 0.5, 2.0, 5.0];
    let mut worst: (f64, String) = (0.0, String::new());
    for &mu in &mus {
        for &s in &sigmas {
            for &y in &ys {
                let (c, sc) = scores_by_quadrature(mu, s, y);
                for (name, got, want) in [("crps", crps_gauss(mu, s, y).unwrap(), c), ("scrps", scrps_gauss(mu, s, y).unwrap(), sc)] {
                    if (got - want).abs() > worst.0 {
                        worst = ((got - want).abs(), format!("{name} at mu={mu} sigma={s} y={y}"));
                    }
                }
            }
        }
    }
    // degenerate mixture
    let mut worst_deg: f64 = 0.0;
    for &(m, s) in &[(0.3, 0.7), (-2.0, 1.5), (4.0, 0.2)] {
        let draws = vec![(m, s * s); 40];
        let (a, b) = split_streams(&draws);
        for &y in &ys {
            worst_deg = worst_deg.max((crps_rb(&a, &b, y).unwrap() - crps_gauss(m, s, y).unwrap()).abs());
            worst_deg = worst_deg.max((scrps_rb(&a, &b, y).unwrap() - scrps_gauss(m, s, y).unwrap()).abs());
        }
    }
    // RB against plain Monte Carlo on mixtures: per-draw term variances
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut rb_wins = 0;
    let cases = 20;
    for _ in 0..cases {
        let comps: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(0.2..2.0)))
            .collect();
        let y = rng.random_range(-2.0..2.0);
        let n = 20_000;
        let moments: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let c = comps[rng.random_range(0..comps.len())];
                (c.0, c.1 * c.1)
            })
            .collect();
        let (first, second) = split_streams(&moments);
        let (a, b) = rb_terms(&first, &second, y).unwrap();
        let rb: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - 0.5 * b).collect();
        let plain: Vec<f64> = first
            .iter()
            .zip(&second)
            .map(|(p, q)| {
                let x = p.0 + p.1.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let xp = q.0 + q.1.sqrt() * rng.sample::<f64, _>(StandardNormal);
                (x - y).abs() - 0.5 * (x - xp).abs()
            })
            .collect();
        if mean_sd(&rb).1 <= mean_sd(&plain).1 {
            rb_wins += 1;
        }
    }
    check(
        worst.0 <= 1e-6 && worst_deg <= 1e-10 && rb_wins == cases,
        format!(
            "343 grid points, max error {:.2e} ({}); degenerate mixture {worst_deg:.2e}; RB variance lower in {rb_wins}/{cases}",
            worst.0, worst.1
        ),
    )
}

fn c8_mean_field() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let center = [150.0, -20.0];
    let n = 400;
    let locs: Vec<[f64; 2]> = (0..n)
        .map(|_| [center[0] + rng.random_range(-10.0..10.0), center[1] + rng.random_range(-10.0..10.0)])
        .collect();
    let days: Vec<f64> = (0..n).map(|_| rng.random_range(1..=365) as f64).collect();
    let coef: Vec<f64> = (0..N_COEF).map(|_| rng.random_range(-2.0..2.0)).collect();
    let values: Vec<f64> = locs
        .iter()
        .zip(&days)
        .map(|(l, &t)| {
            let r = design_row(l[0] - center[0], l[1] - center[1], t);
            r.iter().zip(&coef).map(|(a, b)| a * b).sum()
        })
        .collect();
    let fit = fit_mean_field(&locs, &days, &values, center).unwrap();
    let coef_err = fit.coef.iter().zip(&coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // residuals of residuals are the residuals
    let noisy: Vec<f64> = values.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
    let f1 = fit_mean_field(&locs, &days, &noisy, center).unwrap();
    let r1: Vec<f64> = (0..n).map(|i| noisy[i] - f1.eval(locs[i], days[i])).collect();
    let f2 = fit_mean_field(&locs, &days, &r1, center).unwrap();
    let r2: Vec<f64> = (0..n).map(|i| r1[i] - f2.eval(locs[i], days[i])).collect();
    let idem = r1.iter().zip(&r2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        coef_err <= 1e-8 && idem <= 1e-8,
        format!("coefficient error {coef_err:.2e}, residual idempotence {idem:.2e}"),
    )
}

fn weighted_crps(rows: &[&bispde::windows::ScoreRow]) -> f64 {
    let n: usize = rows.iter().map(|s| s.n).sum();
    rows.iter().map(|s| s.crps * s.n as f64).sum::<f64>() / n as f64
}

fn c9_windows() -> Outcome {
    let config = WindowsConfig {
        lat_span: (-10.0, 30.0),
        lon_span: (100.0, 180.0),
        boxes: Some(vec![0, 3, 9, 14]),
        models: [NuggetStructure::Diagonal, NuggetStructure::General]
            .into_iter()
            .map(|structure| ModelSpec {
                kind: NoiseKind::Gaussian,
                structure,
            })
            .collect(),
        qq_simulations: 0,
        ..Default::default()
    };
    let synth = SyntheticConfig::default();
    assert_eq!(synth.params.nugget.rho_e, 0.8);
    let grid = config.grid().unwrap();
    let mut wins = 0;
    let mut runs = 0;
    let mut log = Vec::new();
    for seed in 0..3u64 {
        let obs = synthetic_observations(&grid, &config, &synth, 900 + seed).unwrap();
        let report = run_windows(&obs, &config).unwrap();
        for &b in config.boxes.as_ref().unwrap() {
            runs += 1;
            let of = |m: &str| {
                let rows: Vec<_> = report.scores.iter().filter(|s| s.box_id == b && s.model == m).collect();
                if rows.is_empty() {
                    f64::NAN
                } else {
                    weighted_crps(&rows)
                }
            };
            let (g, d) = (of("gaussian-general"), of("gaussian-diagonal"));
            if g <= d {
                wins += 1;
            }
            log.push(format!("{:.4}/{:.4}", g, d));
        }
    }
    check(
        wins >= 10,
        format!("general <= diagonal in {wins}/{runs} runs (general/diagonal: {})", log.join(" ")),
    )
}

fn c10_fem() -> Outcome {
    let mesh = make_rect_mesh((0.0, 3.0), (0.0, 2.0), 13, 9).unwrap();
    let fem = assemble_fem(&mesh).unwrap();
    let g1 = fem.g.mul_vec(&vec![1.0; mesh.n_vertices()]).unwrap();
    let g_err = g1.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let area_err = (fem.h.iter().sum::<f64>() - 6.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let pts: Vec<[f64; 2]> = (0..500).map(|_| [rng.random_range(0.0..=3.0), rng.random_range(0.0..=2.0)]).collect();
    let a = projector(&mesh, &pts).unwrap().to_dense();
    let mut convex_err: f64 = 0.0;
    for r in 0..a.nrows() {
        let row = a.row(r);
        convex_err = convex_err.max((row.sum() - 1.0).abs());
        convex_err = convex_err.max(row.iter().fold(0.0f64, |m, &v| m.max(-v)));
    }

    // marginal variance well inside a fine mesh
    let (kappa, sigma) = (2.0, 1.3);
    let fine = make_rect_mesh((0.0, 12.0), (0.0, 12.0), 121, 121).unwrap();
    let ffem = assemble_fem(&fine).unwrap();
    let op = build_operator(&BivModelParams::gaussian(kappa, kappa, sigma, sigma, 0.0), &ffem).unwrap();
    let f = SpdFactor::new(&op.qx).unwrap();
    let diag = SelectedInverse::new(&f).diag();
    let range = 8f64.sqrt() / kappa;
    let mut var_err: f64 = 0.0;
    for (i, v) in fine.vertices().iter().enumerate() {
        if v.iter().all(|&c| c >= 3.0 * range && c <= 12.0 - 3.0 * range) {
            var_err = var_err.max((diag[i] / (sigma * sigma) - 1.0).abs());
        }
    }
    check(
        g_err <= 1e-10 && area_err <= 1e-10 && convex_err <= 1e-12 && var_err <= 0.05,
        format!("|G1| {g_err:.1e}, area {area_err:.1e}, projector {convex_err:.1e}, interior variance {var_err:.4}"),
    )
}

fn run_cli(dir: &Path, args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bispde"))
        .args(args)
        .current_dir(dir)
        .env("BISPDE_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Runs every subcommand in `dir` and returns captured stdout per command.
fn cli_session(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::write(dir.join("sim.json"), r#"{"n_points": 150, "test_points": 20, "mesh_nodes": 12}"#).unwrap();
    std::fs::write(dir.join("fit.json"), r#"{"mesh_nodes": 12}"#).unwrap();
    std::fs::write(
        dir.join("nig.json"),
        r#"{"kind": "nig", "mesh_nodes": 10, "sgd": {"chains": 2, "iterations": 40, "checkpoint_interval": 20, "offset": 20.0}}"#,
    )
    .unwrap();
    std::fs::write(dir.join("study.json"), r#"{"n_points": 120, "mesh_nodes": 10}"#).unwrap();
    std::fs::write(
        dir.join("windows.json"),
        r#"{"lat_span": [-10.0, 10.0], "lon_span": [100.0, 120.0], "boxes": [0], "mesh_nodes": 10,
            "models": [{"kind": "gaussian", "structure": "general"}, {"kind": "nig", "structure": "general"}],
            "sgd": {"chains": 2, "iterations": 30, "checkpoint_interval": 10, "offset": 10.0},
            "predict": {"samples": 20}, "qq_simulations": 2, "qq_predict": {"samples": 10}}"#,
    )
    .unwrap();
    let s = ["--seed", "7"];
    let cmds: Vec<Vec<&str>> = vec![
        vec!["simulate", "--config", "sim.json", "--out", "obs.csv", "--test-out", "test.csv", "--mesh-out", "mesh.json"],
        vec!["fit", "--obs", "obs.csv", "--config", "fit.json", "--out", "fit.json.out", "--trace", "trace.csv"],
        vec!["fit", "--obs", "obs.csv", "--config", "nig.json", "--out", "nig.out", "--trace", "nig_trace.csv"],
        vec!["predict", "--fit", "fit.json.out", "--obs", "obs.csv", "--locations", "test.csv", "--out", "pred.csv"],
        vec![
            "predict", "--fit", "nig.out", "--obs", "obs.csv", "--locations", "test.csv", "--out", "nig_pred.csv",
            "--components", "comp.csv", "--samples", "30",
        ],
        vec!["score", "--predictions", "pred.csv", "--truth", "test.csv", "--out", "scores.csv"],
        vec![
            "score", "--predictions", "nig_pred.csv", "--truth", "test.csv", "--components", "comp.csv", "--out",
            "nig_scores.csv",
        ],
        vec![
            "sim-study", "--config", "study.json", "--cells", "rho=0.2,rho_eps=0.4", "--seeds", "2", "--out", "est.csv",
            "--summary", "sum.csv",
        ],
        vec!["windows-data", "--config", "windows.json", "--out", "argo.csv"],
        vec!["windows", "--obs", "argo.csv", "--config", "windows.json", "--out-dir", "win"],
        vec!["mesh", "generate", "--nx", "5", "--ny", "4", "--out", "m.json"],
        vec!["mesh", "inspect", "--mesh", "mesh.json"],
        vec!["config-schema", "--out-dir", "schema"],
    ];
    let mut out = Vec::new();
    for c in cmds {
        let args: Vec<&str> = s.iter().chain(c.iter()).copied().collect();
        out.push((c.join(" "), run_cli(dir, &args, threads)?));
    }
    Ok(out)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                v.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    v.sort();
    v
}

fn c11_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = cli_session(a.path(), "1")?;
    let out_b = cli_session(b.path(), "3")?;
    let mut diffs = Vec::new();
    for ((name, x), (_, y)) in out_a.iter().zip(&out_b) {
        if x != y {
            diffs.push(format!("stdout of `{name}`"));
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    if fa.len() != fb.len() {
        diffs.push(format!("{} vs {} files", fa.len(), fb.len()));
    }
    for ((na, xa), (nb, xb)) in fa.iter().zip(&fb) {
        if na != nb || xa != xb {
            diffs.push(na.clone());
        }
    }
    check(
        diffs.is_empty(),
        format!("{} commands, {} files compared; differences: {diffs:?}", out_a.len(), fa.len()),
    )
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "dense-oracle likelihood", limit: Some(Duration::from_secs(10)), run: c1_dense_oracle },
        Criterion { id: 2, name: "cross-correlation closed form", limit: Some(Duration::from_secs(5)), run: c2_pearson },
        Criterion { id: 3, name: "simulation-study bias", limit: None, run: c3_sim_bias },
        Criterion { id: 4, name: "signal-to-noise recovery", limit: None, run: c4_snr },
        Criterion { id: 5, name: "Gaussian limit of the NIG sampler", limit: Some(Duration::from_secs(300)), run: c5_gaussian_limit },
        Criterion { id: 6, name: "mixing-variable conditional", limit: None, run: c6_gig_conditional },
        Criterion { id: 7, name: "scoring rules", limit: None, run: c7_scoring },
        Criterion { id: 8, name: "mean-field regression", limit: None, run: c8_mean_field },
        Criterion { id: 9, name: "windowed pipeline direction", limit: Some(Duration::from_secs(1200)), run: c9_windows },
        Criterion { id: 10, name: "finite-element invariants", limit: None, run: c10_fem },
        Criterion { id: 11, name: "CLI determinism", limit: None, run: c11_determinism },
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let res = std::panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let res = match (res, c.limit) {
            (Ok(d), Some(l)) if took > l => Err(format!("{d}; over the {} s limit", l.as_secs())),
            (r, _) => r,
        };
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {}: {tag} ({detail}; {:.1} s)", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
