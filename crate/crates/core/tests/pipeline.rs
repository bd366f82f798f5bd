use std::fs;

use nalgebra::DMatrix;
use pdcfilter::analysis::{
    export_report, export_sweep, run_single, sweep_tradeoff, validate, BasisMethod, BasisOutcome,
    RunConfig,
};
use pdcfilter::covariance::CovarianceMatrix;
use pdcfilter::filtering::{Filter, FilterKind};
use pdcfilter::global_opt::{objective_squeezing, StateContext};
use pdcfilter::Error;

fn config(kind: FilterKind, basis: BasisMethod) -> RunConfig {
    RunConfig { filter_kind: kind, basis, ..RunConfig::default() }
}

#[test]
fn identity_filter_reaches_target() {
    let report = run_single(&config(FilterKind::Identity, BasisMethod::Schmidt)).unwrap();
    let db = report.squeezing.squeezing_db();
    assert!((db[0] - 6.0).abs() < 1e-9, "{db:?}");
    assert!(db.windows(2).all(|w| w[0] > w[1]));
    assert!((report.purity - 1.0).abs() < 1e-9);
    assert!((report.single_mode_character - 16.0 / 15.0).abs() < 1e-3, "{}", report.single_mode_character);
}

#[test]
fn blocking_filter_leaves_vacuum() {
    let report = run_single(&config(FilterKind::Blocking, BasisMethod::Schmidt)).unwrap();
    for m in &report.squeezing.modes {
        assert!(m.squeezing_db.abs() < 1e-12);
    }
    assert!((report.purity - 1.0).abs() < 1e-12);
    let vac = CovarianceMatrix::vacuum(report.covariance.n_modes());
    assert!((report.covariance.sigma() - vac.sigma()).amax() < 1e-14);
}

#[test]
fn narrow_filter_trades_squeezing_for_purity_loss() {
    let report = run_single(&config(FilterKind::Rectangular, BasisMethod::Svd)).unwrap();
    let db = report.squeezing.squeezing_db();
    assert!(db[0] > 0.0 && db[0] < 6.0, "{db:?}");
    assert!(report.purity < 1.0 && report.purity > 0.0);
    assert!(report.single_mode_character > 1.0);
    assert!(report.min_symplectic >= 0.5 - 1e-9);
    assert!(matches!(report.basis_outcome, BasisOutcome::Svd(_)));
}

#[test]
fn svd_basis_beats_unfiltered_schmidt_basis_after_filtering() {
    let svd = run_single(&config(FilterKind::Rectangular, BasisMethod::Svd)).unwrap();
    let schmidt = run_single(&config(FilterKind::Rectangular, BasisMethod::Schmidt)).unwrap();
    assert!(svd.squeezing.modes[0].squeezing_db >= schmidt.squeezing.modes[0].squeezing_db - 1e-9);
}

#[test]
fn exports_are_byte_identical_across_runs() {
    let cfg = config(FilterKind::Gaussian, BasisMethod::Svd);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = export_report(&run_single(&cfg).unwrap(), a.path()).unwrap();
    let fb = export_report(&run_single(&cfg).unwrap(), b.path()).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn exported_covariance_reloads_exactly() {
    let report = run_single(&config(FilterKind::Rectangular, BasisMethod::Svd)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_report(&report, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("covariance.csv")).unwrap();
    let back = CovarianceMatrix::from_csv(&text).unwrap();
    assert!((back.sigma() - report.covariance.sigma()).amax() < 1e-15);
}

#[test]
fn manifest_records_seed_and_optimizer_settings() {
    let cfg = RunConfig {
        n_modes: 1,
        ga_population: 16,
        ga_max_generations: 20,
        seed: 4242,
        ..config(FilterKind::Rectangular, BasisMethod::Ga)
    };
    let report = run_single(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_report(&report, dir.path()).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 4242"));
    assert!(manifest.contains("population = 16"));
    assert!(manifest.contains("max_generations = 20"));
    assert!(dir.path().join("ga_log.csv").exists());
    let reloaded: toml::Value = toml::from_str(&manifest).unwrap();
    let cfg_back: RunConfig = RunConfig::from_toml_str(&toml::to_string(&reloaded["config"]).unwrap()).unwrap();
    assert_eq!(cfg_back, cfg);
}

#[test]
fn sweep_is_monotone_in_width_and_exports_every_point() {
    let cfg = RunConfig { sweep_target_db: vec![6.0], ..RunConfig::default() };
    let report = sweep_tradeoff(&cfg).unwrap();
    assert_eq!(report.records.len(), cfg.sweep_widths.len());
    assert!(report.records.iter().all(|r| r.error.is_none()));
    let db: Vec<f64> = report.records.iter().map(|r| r.first_mode_squeezing_db).collect();
    assert!(db.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{db:?}");
    let dir = tempfile::tempdir().unwrap();
    export_sweep(&report, dir.path()).unwrap();
    let table = fs::read_to_string(dir.path().join("tradeoff.csv")).unwrap();
    assert_eq!(table.lines().count(), report.records.len() + 1);
    for i in 0..report.records.len() {
        assert!(dir.path().join(format!("points/point_{i:03}.csv")).exists());
    }
}

#[test]
fn complete_basis_of_unfiltered_state_is_pure() {
    let cfg = RunConfig {
        grid_points: 40,
        n_retained: 40,
        n_modes: 40,
        ..config(FilterKind::Identity, BasisMethod::Schmidt)
    };
    let report = run_single(&cfg).unwrap();
    assert!((report.purity - 1.0).abs() < 1e-8, "{}", report.purity);
}

#[test]
fn optimizer_recovers_schmidt_mode_without_filter() {
    let cfg = RunConfig {
        n_modes: 1,
        ga_population: 64,
        seed: 7,
        ..config(FilterKind::Identity, BasisMethod::Ga)
    };
    let report = run_single(&cfg).unwrap();
    let db = report.squeezing.modes[0].squeezing_db;
    assert!((db - 6.0).abs() < 0.05, "{db}");
    let BasisOutcome::Ga(opt) = &report.basis_outcome else { panic!("expected GA outcome") };
    let d = report.schmidt.grid().d_omega();
    let psi = report.schmidt.signal_modes().column(0).map(|z| z.re);
    let overlap = (opt.modes.column(0).dot(&psi) * d).abs();
    assert!(overlap > 0.99, "{overlap}");
}

#[test]
fn objective_matches_direct_squeezing_for_schmidt_mode() {
    let cfg = config(FilterKind::Identity, BasisMethod::Schmidt);
    let report = run_single(&cfg).unwrap();
    let grid = *report.schmidt.grid();
    let ctx = StateContext::new(&report.schmidt, &Filter::identity(&grid), &Filter::identity(&grid)).unwrap();
    let psi = report.schmidt.signal_modes().column(0);
    assert!(psi.iter().all(|z| z.im.abs() < 1e-12));
    let phi = DMatrix::from_iterator(grid.n_points(), 1, psi.iter().map(|z| z.re));
    let db = objective_squeezing(&ctx, &phi, 0).unwrap();
    assert!((db - report.squeezing.modes[0].squeezing_db).abs() < 1e-8, "{db}");
}

#[test]
fn truncating_grid_is_refused() {
    let cfg = RunConfig { omega_min: -10.0, omega_max: 10.0, ..RunConfig::default() };
    assert!(matches!(run_single(&cfg), Err(Error::Truncation { .. })));
    assert!(validate(&cfg).is_err() || validate(&cfg).unwrap().iter().any(|c| !c.passed));
}

#[test]
fn default_configuration_validates() {
    let checks = validate(&RunConfig::default()).unwrap();
    for c in &checks {
        assert!(c.passed, "{c}");
    }
}
