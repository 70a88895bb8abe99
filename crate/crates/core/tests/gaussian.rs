use bispde::gaussian_fit::{fit_gauss, predict_gauss, Dataset, GaussFitOptions};
use bispde::mesh_fem::{assemble_fem, make_rect_mesh, TriMesh};
use bispde::model::{build_operator, BivModelParams};
use bispde::noise::{NuggetParams, NuggetStructure};
use bispde::obs::ObservationSet;
use bispde::params::FullParams;
use bispde::simulate::{sim_gauss_weights, sim_observations, uniform_locations};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn truth() -> FullParams {
    FullParams::new(
        BivModelParams::gaussian(2.0, 2.0, 1.0, 1.0, 0.7),
        NuggetParams::new(0.5, 0.5, 0.4, NuggetStructure::General),
    )
}

/// `reps` replicates with `n` co-located sites per field, squeezed into `x ∈ [x0, x1]`.
fn simulate(mesh: &TriMesh, p: &FullParams, n: usize, reps: usize, x_window: (f64, f64), seed: u64) -> ObservationSet {
    let fem = assemble_fem(mesh).unwrap();
    let op = build_operator(&p.model, &fem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, x1) = x_window;
    let x_extent = mesh.bbox().1 - mesh.bbox().0;
    let out: Vec<_> = (0..reps)
        .map(|r| {
            let w = sim_gauss_weights(&op, &mut rng).unwrap();
            let locs: Vec<[f64; 2]> = uniform_locations(mesh, n, &mut rng)
                .into_iter()
                .map(|l| [x0 + (x1 - x0) * l[0] / x_extent, l[1]])
                .collect();
            sim_observations(&w, mesh, [&locs, &locs], [&[], &[]], &p.nugget, r as i64, &mut rng).unwrap()
        })
        .collect();
    ObservationSet::from_replicates(&out, vec![])
}

#[test]
fn strong_cross_correlation_is_recovered() {
    let p = truth();
    let mesh = make_rect_mesh((0.0, 10.0), (0.0, 10.0), 31, 31).unwrap();
    let data = Dataset::new(&mesh, &simulate(&mesh, &p, 1000, 10, (0.0, 10.0), 77)).unwrap();
    let fit = fit_gauss(&data, None, &GaussFitOptions::default()).unwrap();
    assert!(fit.converged);
    let est = fit.params;
    assert!((est.model.rho - 0.7).abs() <= 0.25, "{est:?}");
    assert!((est.nugget.rho_e - 0.4).abs() <= 0.25, "{est:?}");
}

#[test]
fn prediction_far_from_data_reverts_to_the_prior() {
    let p = truth();
    // data only in the left strip; the target sites are four ranges from the
    // data and from every edge, on a mesh fine enough for the lumped mass
    let mesh = make_rect_mesh((0.0, 16.0), (0.0, 12.0), 81, 61).unwrap();
    let obs = simulate(&mesh, &p, 200, 1, (0.0, 4.0), 3);
    let data = Dataset::new(&mesh, &obs).unwrap();
    let fit = bispde::gaussian_fit::FitResult {
        params: p,
        beta: vec![],
        loglik: None,
        iterations: 0,
        converged: true,
        param_names: vec![],
        trace: vec![],
        std_errors: None,
        chain_sd: None,
    };
    let far = [[10.0, 6.0], [10.5, 5.5]];
    let near = [[2.0, 5.0]];
    let pf = predict_gauss(&fit, &data, 0, [&far, &far]).unwrap();
    let pn = predict_gauss(&fit, &data, 0, [&near, &near]).unwrap();
    for k in 0..2 {
        for (m, v) in pf[k].mean.iter().zip(&pf[k].var) {
            assert!((v - 1.0).abs() <= 0.1, "far variance {v}");
            assert!(m.abs() < 0.05, "far mean {m}");
        }
        assert!(pn[k].var[0] < 0.5 * pf[k].var[0]);
    }
}
