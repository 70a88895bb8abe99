//! Moving-window analysis on a latitude/longitude grid: equal-area boxes,
//! local mean-field removal, per-window model fits, leave-one-out scoring
//! and QQ envelopes.

pub mod grid;
pub mod loocv;
pub mod mean_field;
pub mod pipeline;
pub mod qq;
pub mod synthetic;

pub use grid::{build_grid, GridBox};
pub use pipeline::{
    aggregate, best_model_counts, process_window, run_windows, write_rows, GlobalRow, ModelSpec, ParamRow, QqRow,
    ScoreRow, TallyRow, WindowReport, WindowRow, WindowsConfig,
};
pub use synthetic::{synthetic_observations, SyntheticConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseKind;
    use crate::noise::NuggetStructure;

    fn small_config() -> WindowsConfig {
        WindowsConfig {
            lat_span: (0.0, 20.0),
            lon_span: (0.0, 40.0),
            mesh_nodes: 12,
            min_points: 100,
            models: vec![
                ModelSpec {
                    kind: NoiseKind::Gaussian,
                    structure: NuggetStructure::Diagonal,
                },
                ModelSpec {
                    kind: NoiseKind::Gaussian,
                    structure: NuggetStructure::General,
                },
            ],
            qq_simulations: 3,
            qq_points: 5,
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_window_round_trip() {
        let config = WindowsConfig {
            boxes: Some(vec![0]),
            ..small_config()
        };
        let grid = config.grid().unwrap();
        assert_eq!(grid.len(), 1);
        let obs = synthetic_observations(&grid, &config, &SyntheticConfig::default(), 4).unwrap();
        let report = run_windows(&obs, &config).unwrap();
        assert_eq!(report.windows.len(), 1);
        assert_eq!(report.windows[0].status, "fitted", "{:?}", report.windows[0]);
        assert_eq!(report.params.len(), 2);
        assert!(report.params.iter().all(|p| p.status == "ok"), "{:?}", report.params);
        assert_eq!(report.scores.len(), 4);
        assert_eq!(report.qq.len(), 2 * 2 * 5);
        let general = &report.params[1];
        assert!(general.rho_e.unwrap() > 0.4, "{general:?}");
        let global = aggregate(&report.scores);
        assert_eq!(global.len(), 2 * 2 * 4);
        let tallies = best_model_counts(&report.scores);
        for field in 1..=2 {
            for m in pipeline::METRICS {
                let total: usize = tallies.iter().filter(|t| t.field == field && t.metric == m).map(|t| t.wins).sum();
                assert_eq!(total, 1);
            }
        }
        // a single window: the aggregate equals its scores
        let s = report.scores.iter().find(|s| s.model == "gaussian-general" && s.field == 1).unwrap();
        let g = global.iter().find(|g| g.model == "gaussian-general" && g.field == 1 && g.metric == "crps").unwrap();
        assert!((s.crps - g.value).abs() < 1e-12);
        let g = global.iter().find(|g| g.model == "gaussian-general" && g.field == 1 && g.metric == "rmse").unwrap();
        assert!((s.rmse - g.value).abs() < 1e-12);
    }

    #[test]
    fn sparse_windows_are_omitted_with_a_reason() {
        let config = WindowsConfig {
            boxes: Some(vec![1]),
            ..small_config()
        };
        let grid = config.grid().unwrap();
        let synth = SyntheticConfig {
            years: 1,
            in_season: 99,
            off_season: 30,
            ..Default::default()
        };
        let obs = synthetic_observations(&grid, &config, &synth, 1).unwrap();
        let report = run_windows(&obs, &config).unwrap();
        assert_eq!(report.windows[0].status, "omitted");
        assert!(report.windows[0].reason.contains("99"), "{}", report.windows[0].reason);
        assert!(report.params.iter().all(|p| p.status == "omitted"));
        assert!(report.scores.is_empty());
        let empty = crate::obs::ObservationSet::default();
        assert!(run_windows(&empty, &config).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelSpec::all() {
            assert_eq!(ModelSpec::parse(&m.name()).unwrap(), m);
        }
        assert!(ModelSpec::parse("student-t").is_err());
    }
}
