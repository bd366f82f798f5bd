//! End-to-end runs: configuration, single runs, trade-off sweeps, validation
//! and file export.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis_opt::{modes_csv, svd_effective_basis, EffectiveSchmidt};
use crate::covariance::{
    analytic_epr_block, assemble_covariance, check_physicality, lossy_epr_block, CovarianceMatrix,
};
use crate::error::{Error, Result};
use crate::filtering::{
    filtered_projections, make_gauss_filter, make_rect_filter, Filter, FilterKind, MeasurementBasis, Projector,
};
use crate::global_opt::{ga_optimize_basis, GaParams, OptimizedBasis, ParentSelection, StateContext};
use crate::linalg::{self, C64};
use crate::metrics::{
    epr_variances, purity, purity_from_determinant, purity_from_symplectic, single_mode_character,
    squeezing_report, ModeSqueezingReport,
};
use crate::spectral::{
    build_gaussian_jsa, off_grid_mass, schmidt_decompose, squeezing_db, FrequencyGrid, GaussianJsaParams, JsaMatrix,
    SchmidtData,
};

const MODULE: &str = "analysis_cli";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMethod {
    Schmidt,
    #[serde(alias = "svd_effective")]
    Svd,
    Ga,
}

impl fmt::Display for BasisMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisMethod::Schmidt => "schmidt",
            BasisMethod::Svd => "svd",
            BasisMethod::Ga => "ga",
        })
    }
}

impl std::str::FromStr for BasisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schmidt" => Ok(BasisMethod::Schmidt),
            "svd" | "svd_effective" => Ok(BasisMethod::Svd),
            "ga" => Ok(BasisMethod::Ga),
            other => Err(Error::config(
                MODULE,
                format!("unknown basis method {other:?}; expected schmidt, svd or ga"),
            )),
        }
    }
}

/// Complete description of a run. Every key has a default and unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub theta: f64,

    pub grid_points: usize,
    pub omega_min: f64,
    pub omega_max: f64,

    /// Applied identically to signal and idler.
    pub filter_kind: FilterKind,
    pub filter_center: f64,
    /// Passband width for rectangular filters, FWHM for Gaussian ones.
    pub filter_width: f64,
    pub sweep_widths: Vec<f64>,

    /// First-mode squeezing that fixes the gain, unless `gain_b` is set.
    pub target_db: f64,
    pub gain_b: Option<f64>,
    pub sweep_target_db: Vec<f64>,

    pub n_retained: usize,
    /// Number of measured modes in the covariance matrix.
    pub n_modes: usize,
    pub basis: BasisMethod,

    pub ga_population: usize,
    pub ga_mutation_prob: f64,
    pub ga_mutation_sigma: f64,
    pub ga_convergence_tol: f64,
    pub ga_convergence_window: usize,
    pub ga_max_generations: usize,
    /// Parent tournament size; 0 draws parents uniformly.
    pub ga_tournament_size: usize,

    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let jsa = GaussianJsaParams::reference();
        let grid = FrequencyGrid::reference();
        let ga = GaParams::default();
        RunConfig {
            sigma_a: jsa.sigma_a,
            sigma_b: jsa.sigma_b,
            theta: jsa.theta,
            grid_points: grid.n_points(),
            omega_min: grid.omega_min(),
            omega_max: grid.omega_max(),
            filter_kind: FilterKind::Rectangular,
            filter_center: 0.0,
            filter_width: 4.0,
            sweep_widths: vec![1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 20.0, 40.0],
            target_db: 6.0,
            gain_b: None,
            sweep_target_db: vec![2.0, 4.0, 6.0],
            n_retained: 10,
            n_modes: 5,
            basis: BasisMethod::Svd,
            ga_population: ga.population,
            ga_mutation_prob: ga.mutation_prob,
            ga_mutation_sigma: ga.mutation_sigma,
            ga_convergence_tol: ga.convergence_tol,
            ga_convergence_window: ga.convergence_window,
            ga_max_generations: ga.max_generations,
            ga_tournament_size: match ga.selection {
                ParentSelection::Tournament { size } => size,
                ParentSelection::Uniform => 0,
            },
            seed: 0,
            out_dir: PathBuf::from("pdcfilter-out"),
        }
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(MODULE, format!("invalid configuration: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(MODULE, format!("cannot serialize configuration: {e}")))
    }

    pub fn jsa_params(&self) -> GaussianJsaParams {
        GaussianJsaParams {
            sigma_a: self.sigma_a,
            sigma_b: self.sigma_b,
            theta: self.theta,
            gain_b: self.gain_b.unwrap_or(0.0),
        }
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.grid_points, self.omega_min, self.omega_max)
    }

    pub fn ga_params(&self) -> GaParams {
        GaParams {
            population: self.ga_population,
            mutation_prob: self.ga_mutation_prob,
            mutation_sigma: self.ga_mutation_sigma,
            convergence_tol: self.ga_convergence_tol,
            convergence_window: self.ga_convergence_window,
            max_generations: self.ga_max_generations,
            selection: if self.ga_tournament_size == 0 {
                ParentSelection::Uniform
            } else {
                ParentSelection::Tournament { size: self.ga_tournament_size }
            },
            rng_seed: self.seed,
        }
    }

    pub fn filter(&self, width: f64, grid: &FrequencyGrid) -> Result<Filter> {
        match self.filter_kind {
            FilterKind::Rectangular => make_rect_filter(self.filter_center, width, grid),
            FilterKind::Gaussian => make_gauss_filter(self.filter_center, width, grid),
            FilterKind::Identity => Ok(Filter::identity(grid)),
            FilterKind::Blocking => Ok(Filter::blocking(grid)),
            other => Err(Error::config(
                MODULE,
                format!("filter kind {other} cannot be configured; use rectangular, gaussian, identity or blocking"),
            )),
        }
    }

    /// Checks every component invariant without running the pipeline.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let params = self.jsa_params();
        params.validate()?;
        let mass = off_grid_mass(&params, &grid);
        if mass > crate::spectral::OFF_GRID_MASS_THRESHOLD {
            return Err(Error::Truncation {
                module: MODULE,
                off_grid_mass: mass,
                threshold: crate::spectral::OFF_GRID_MASS_THRESHOLD,
            });
        }
        self.filter(self.filter_width, &grid)?;
        let bad = |msg: String| Err(Error::config(MODULE, msg));
        if self.sweep_widths.is_empty() || !strictly_increasing(&self.sweep_widths) {
            return bad("sweep_widths must be non-empty and strictly increasing".into());
        }
        for &w in &self.sweep_widths {
            self.filter(w, &grid)?;
        }
        if self.sweep_target_db.is_empty() || !strictly_increasing(&self.sweep_target_db) {
            return bad("sweep_target_db must be non-empty and strictly increasing".into());
        }
        if self.sweep_target_db.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return bad("sweep_target_db entries must be non-negative".into());
        }
        if !(self.target_db >= 0.0 && self.target_db.is_finite()) {
            return bad(format!("target_db must be non-negative, got {}", self.target_db));
        }
        if let Some(b) = self.gain_b {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("gain_b must be non-negative, got {b}"));
            }
        }
        if self.n_retained == 0 || self.n_retained > self.grid_points {
            return bad(format!("n_retained must lie in 1..={}, got {}", self.grid_points, self.n_retained));
        }
        if self.n_modes == 0 || self.n_modes > self.n_retained {
            return bad(format!("n_modes must lie in 1..={}, got {}", self.n_retained, self.n_modes));
        }
        if self.basis == BasisMethod::Ga {
            self.ga_params().validate()?;
        }
        Ok(())
    }
}

/// Decomposed, gain-scaled source shared by all points of a run or sweep.
#[derive(Debug, Clone)]
pub struct Source {
    pub jsa: JsaMatrix,
    pub schmidt: SchmidtData,
}

impl Source {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let grid = config.grid()?;
        let jsa = build_gaussian_jsa(&config.jsa_params(), &grid)?;
        let schmidt = schmidt_decompose(&jsa, config.n_retained)?;
        Ok(Source { jsa, schmidt })
    }

    pub fn gain_for(&self, config: &RunConfig, target_db: f64) -> Result<f64> {
        match config.gain_b {
            Some(b) => Ok(b),
            None => self.schmidt.gain_for_first_mode_db(target_db),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BasisOutcome {
    Schmidt,
    Svd(EffectiveSchmidt),
    Ga(OptimizedBasis),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub gain_b: f64,
    pub schmidt: SchmidtData,
    pub filter: Filter,
    pub basis_method: BasisMethod,
    pub basis: MeasurementBasis,
    pub basis_outcome: BasisOutcome,
    pub covariance: CovarianceMatrix,
    pub squeezing: ModeSqueezingReport,
    pub purity: f64,
    pub single_mode_character: f64,
    pub min_symplectic: f64,
}

/// Filtered pipeline for one filter width and gain against a prepared source.
fn run_point(
    config: &RunConfig,
    source: &Source,
    width: f64,
    gain_b: f64,
    method: BasisMethod,
) -> Result<RunReport> {
    let grid = *source.jsa.grid();
    let schmidt = source.schmidt.apply_gain(gain_b)?;
    let filter = config.filter(width, &grid)?;
    let (basis, outcome) = match method {
        BasisMethod::Schmidt => (MeasurementBasis::schmidt(&schmidt, config.n_modes)?, BasisOutcome::Schmidt),
        BasisMethod::Svd => {
            let e = svd_effective_basis(&source.jsa, gain_b, &filter, &filter, config.n_retained)?;
            (e.measurement_basis(config.n_modes)?, BasisOutcome::Svd(e))
        }
        BasisMethod::Ga => {
            let ctx = StateContext::new(&schmidt, &filter, &filter)?;
            let o = ga_optimize_basis(&ctx, config.n_modes, &config.ga_params())?;
            (MeasurementBasis::shared(&grid, o.modes_complex())?, BasisOutcome::Ga(o))
        }
    };
    let projections = filtered_projections(&schmidt, &filter, &filter, &basis)?;
    let covariance = assemble_covariance(&projections, config.n_modes)?;
    let squeezing = squeezing_report(&covariance)?;
    let purity = purity(&covariance)?;
    let smc = single_mode_character(&squeezing.modes)?;
    let min_symplectic = covariance.diagnostics().min_symplectic;
    Ok(RunReport {
        config: config.clone(),
        gain_b,
        schmidt,
        filter,
        basis_method: method,
        basis,
        basis_outcome: outcome,
        covariance,
        squeezing,
        purity,
        single_mode_character: smc,
        min_symplectic,
    })
}

pub fn run_single(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let source = Source::new(config)?;
    let gain_b = source.gain_for(config, config.target_db)?;
    run_point(config, &source, config.filter_width, gain_b, config.basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRecord {
    pub filter_width: f64,
    /// `None` when the gain was given directly.
    pub target_db: Option<f64>,
    pub gain_b: f64,
    pub first_mode_squeezing_db: f64,
    pub single_mode_character: f64,
    pub purity: f64,
    pub tail_weight: f64,
    pub basis_method: BasisMethod,
    pub error: Option<String>,
}

impl TradeoffRecord {
    pub const CSV_HEADER: &'static str =
        "filter_width,target_db,gain_b,first_mode_squeezing_db,single_mode_character,purity,tail_weight,basis_method,error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.filter_width),
            self.target_db.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.gain_b),
            fmt_f64(self.first_mode_squeezing_db),
            fmt_f64(self.single_mode_character),
            fmt_f64(self.purity),
            fmt_f64(self.tail_weight),
            self.basis_method,
            self.error.as_deref().map(csv_quote).unwrap_or_default(),
        )
    }
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// 17 significant digits; infinities as `inf` / `-inf`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: RunConfig,
    /// Sorted by gain, then width.
    pub records: Vec<TradeoffRecord>,
    /// Covariance matrices of the successful points, in record order.
    pub covariances: Vec<Option<CovarianceMatrix>>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TradeoffRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// One record per `(width, gain)` pair of the configured sweep lists. A
/// failing point is recorded with its error and the sweep continues.
pub fn sweep_tradeoff(config: &RunConfig) -> Result<SweepReport> {
    config.validate()?;
    let source = Source::new(config)?;
    let targets: Vec<Option<f64>> = match config.gain_b {
        Some(_) => vec![None],
        None => config.sweep_target_db.iter().map(|&t| Some(t)).collect(),
    };
    let mut points = Vec::new();
    for &t in &targets {
        let gain = source.gain_for(config, t.unwrap_or(0.0))?;
        for &w in &config.sweep_widths {
            points.push((w, t, gain));
        }
    }
    let tail_weight = source.schmidt.tail_weight();
    let mut results: Vec<(TradeoffRecord, Option<CovarianceMatrix>)> = points
        .par_iter()
        .map(|&(w, t, gain)| match run_point(config, &source, w, gain, config.basis) {
            Ok(rep) => (
                TradeoffRecord {
                    filter_width: w,
                    target_db: t,
                    gain_b: gain,
                    first_mode_squeezing_db: rep.squeezing.modes[0].squeezing_db,
                    single_mode_character: rep.single_mode_character,
                    purity: rep.purity,
                    tail_weight,
                    basis_method: config.basis,
                    error: None,
                },
                Some(rep.covariance),
            ),
            Err(e) => (
                TradeoffRecord {
                    filter_width: w,
                    target_db: t,
                    gain_b: gain,
                    first_mode_squeezing_db: f64::NAN,
                    single_mode_character: f64::NAN,
                    purity: f64::NAN,
                    tail_weight,
                    basis_method: config.basis,
                    error: Some(e.to_string()),
                },
                None,
            ),
        })
        .collect();
    results.sort_by(|a, b| {
        a.0.gain_b
            .total_cmp(&b.0.gain_b)
            .then(a.0.filter_width.total_cmp(&b.0.filter_width))
    });
    let (records, covariances) = results.into_iter().unzip();
    Ok(SweepReport {
        config: config.clone(),
        records,
        covariances,
    })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ga: Option<GaParams>,
    config: &'a RunConfig,
}

fn manifest(command: &str, config: &RunConfig, gain_b: Option<f64>) -> Result<String> {
    let m = Manifest {
        tool: "pdcfilter",
        version: crate::VERSION,
        command,
        seed: config.seed,
        gain_b,
        ga: (config.basis == BasisMethod::Ga).then(|| config.ga_params()),
        config,
    };
    toml::to_string(&m).map_err(|e| Error::config(MODULE, format!("cannot serialize manifest: {e}")))
}

fn schmidt_csv(s: &SchmidtData) -> String {
    let mut out = String::from("mode_index,lambda,r,unfiltered_squeezing_db\n");
    let r = s.r_values().unwrap_or(&[]);
    for (k, l) in s.lambdas().iter().enumerate() {
        let rk = r.get(k).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{},{},{},{}\n", k + 1, fmt_f64(*l), fmt_f64(rk), fmt_f64(squeezing_db(rk))));
    }
    out
}

fn summary_csv(report: &RunReport) -> String {
    let rows = [
        ("gain_b", report.gain_b),
        ("first_mode_squeezing_db", report.squeezing.modes[0].squeezing_db),
        ("single_mode_character", report.single_mode_character),
        ("purity", report.purity),
        ("tail_weight", report.schmidt.tail_weight()),
        ("min_symplectic", report.min_symplectic),
        ("max_asymmetry", report.covariance.diagnostics().max_asymmetry),
        ("max_imag_residual", report.covariance.diagnostics().max_imag_residual),
    ];
    let mut out = String::from("quantity,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{}\n", fmt_f64(v)));
    }
    out
}

/// Writes the tables of a single run and its manifest to `out_dir`; returns
/// the paths written.
pub fn export_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let grid = report.schmidt.grid();
    let mut files: Vec<(&str, String)> = vec![
        ("manifest.toml", manifest("run", &report.config, Some(report.gain_b))?),
        ("schmidt.csv", schmidt_csv(&report.schmidt)),
        (
            "modes.csv",
            modes_csv(grid, &[("signal", report.basis.signal()), ("idler", report.basis.idler())]),
        ),
        ("squeezing.csv", report.squeezing.to_csv()),
        ("covariance.csv", report.covariance.to_csv()),
        ("summary.csv", summary_csv(report)),
    ];
    if let BasisOutcome::Ga(o) = &report.basis_outcome {
        files.push(("ga_log.csv", o.log_csv()));
    }
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = out_dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes one file per sweep point under `points/`, the trade-off table and
/// the manifest.
pub fn export_sweep(report: &SweepReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let points = out_dir.join("points");
    ensure_dir(&points)?;
    let mut written = Vec::new();
    for (i, (rec, cov)) in report.records.iter().zip(&report.covariances).enumerate() {
        let path = points.join(format!("point_{i:03}.csv"));
        write_atomic(&path, &format!("{}\n{}\n", TradeoffRecord::CSV_HEADER, rec.csv_row()))?;
        written.push(path);
        if let Some(c) = cov {
            let path = points.join(format!("point_{i:03}_covariance.csv"));
            write_atomic(&path, &c.to_csv())?;
            written.push(path);
        }
    }
    for (name, contents) in [
        ("tradeoff.csv", report.to_csv()),
        ("manifest.toml", manifest("sweep", &report.config, report.config.gain_b)?),
    ] {
        let path = out_dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.0e})"),
    }
}

fn max_block_deviation(cov: &CovarianceMatrix, expected: impl Fn(usize) -> nalgebra::Matrix4<f64>) -> Result<f64> {
    let mut worst = 0.0_f64;
    for k in 0..cov.n_modes() {
        for l in 0..cov.n_modes() {
            let b = cov.mode_block(k, l)?;
            let dev = if k == l { (b - expected(k)).amax() } else { b.amax() };
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Invariant suite evaluated on the state and filter of a configuration.
pub fn validate(config: &RunConfig) -> Result<Vec<CheckOutcome>> {
    config.validate()?;
    let source = Source::new(config)?;
    let grid = *source.jsa.grid();
    let d = grid.d_omega();
    let gain = source.gain_for(config, config.target_db)?;
    let s = source.schmidt.apply_gain(gain)?;
    let r = s.r_values()?.to_vec();
    let n = config.n_modes;
    let schmidt_basis = MeasurementBasis::schmidt(&s, n)?;
    let mut out = Vec::new();

    let ortho = linalg::orthonormality_error(s.signal_modes(), d)
        .max(linalg::orthonormality_error(s.idler_modes(), d));
    out.push(check("schmidt modes orthonormal", ortho, 1e-10));

    let resid = (source.jsa.values() - s.reconstruct()).map(|z| z.norm_sqr()).sum() * d * d;
    out.push(CheckOutcome {
        name: "reconstruction within tail weight",
        passed: resid <= s.tail_weight() * (1.0 + 1e-6) + 1e-14,
        detail: format!("residual {resid:.3e}, tail weight {:.3e}", s.tail_weight()),
    });

    let id = Filter::identity(&grid);
    let cov = assemble_covariance(&filtered_projections(&s, &id, &id, &schmidt_basis)?, n)?;
    out.push(check(
        "unfiltered blocks match two-mode squeezed vacuum",
        max_block_deviation(&cov, |k| analytic_epr_block(r[k]))?,
        1e-9,
    ));

    let block = Filter::blocking(&grid);
    let cov = assemble_covariance(&filtered_projections(&s, &block, &block, &schmidt_basis)?, n)?;
    let vac = (cov.sigma() - nalgebra::DMatrix::<f64>::identity(4 * n, 4 * n) * 0.5).amax();
    out.push(check("blocking filter gives vacuum", vac, 1e-12));

    let eta: f64 = 0.5;
    let flat = Filter::flat(eta.sqrt(), &grid)?;
    let cov = assemble_covariance(&filtered_projections(&s, &flat, &flat, &schmidt_basis)?, n)?;
    out.push(check(
        "flat filter equals beam-splitter loss",
        max_block_deviation(&cov, |k| lossy_epr_block(r[k], eta))?,
        1e-9,
    ));

    let filter = config.filter(config.filter_width, &grid)?;
    let eff = svd_effective_basis(&source.jsa, gain, &filter, &filter, config.n_retained)?;
    let excess = eff
        .r_primes()
        .iter()
        .zip(&r)
        .map(|(rp, r)| rp - r)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(CheckOutcome {
        name: "effective squeezing contracts",
        passed: excess <= 1e-12,
        detail: format!("max r' - r = {excess:.3e}"),
    });

    let eff_basis = eff.measurement_basis(n)?;
    let dense = filtered_projections(&s, &filter, &filter, &eff_basis)?;
    let fast = Projector::new(&s, &filter, &filter)?.project(&eff_basis)?;
    let lowrank = [
        (&dense.u_a, &fast.u_a),
        (&dense.u_b, &fast.u_b),
        (&dense.v_a, &fast.v_a),
        (&dense.v_b, &fast.v_b),
    ]
    .iter()
    .map(|(x, y)| (*x - *y).map(|z: C64| z.norm()).max())
    .fold(0.0, f64::max);
    out.push(check("low-rank projections match dense", lowrank, 1e-12));

    let cov = assemble_covariance(&dense, n)?;
    let phys = check_physicality(cov.sigma(), 1e-9)?;
    out.push(CheckOutcome {
        name: "filtered state physical",
        passed: phys.passed,
        detail: format!("min symplectic eigenvalue {:.12}", phys.min_symplectic),
    });
    let pd = purity_from_determinant(&cov)?;
    let ps = purity_from_symplectic(&cov)?;
    out.push(check("purity routes agree", (pd - ps).abs(), 1e-9));
    let worst_product = (0..n)
        .map(|k| epr_variances(&cov, k).map(|(m, p)| m * p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome {
        name: "uncertainty product",
        passed: worst_product >= 1.0 - 1e-9,
        detail: format!("min Δ²₋·Δ²₊ = {worst_product:.12}"),
    });
    Ok(out)
}
