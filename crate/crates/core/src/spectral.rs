//! Discretized joint spectral amplitude and its Schmidt decomposition.
//!
//! The signal and idler frequency axes share one uniform grid. Integrals use
//! the rectangle rule with weight `d_omega`, so a grid function `ψ` is
//! normalized when `Σ |ψ(ω_j)|² d_omega = 1`.
//!
//! The Schmidt decomposition is taken as
//!
//! ```text
//! f(ω_s, ω_i) = Σ_k λ_k ψ_k^*(ω_s) φ_k^*(ω_i),     Σ_k λ_k² = 1
//! ```
//!
//! and the gain turns the normalized amplitudes into squeezing parameters,
//! `r_k = B λ_k`.

use std::f64::consts::{LN_10, LOG10_E};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};

const MODULE: &str = "spectral_core";

/// Largest fraction of the analytic `|f|²` mass allowed to fall off the grid.
pub const OFF_GRID_MASS_THRESHOLD: f64 = 1e-6;

pub const DEFAULT_N_RETAINED: usize = 10;

/// Uniform frequency grid shared by the signal and idler axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    n_points: usize,
    omega_min: f64,
    omega_max: f64,
    d_omega: f64,
}

impl FrequencyGrid {
    pub fn new(n_points: usize, omega_min: f64, omega_max: f64) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::config(
                MODULE,
                format!("grid needs at least 2 points, got {n_points}"),
            ));
        }
        if !(omega_min.is_finite() && omega_max.is_finite()) || omega_max <= omega_min {
            return Err(Error::config(
                MODULE,
                format!("invalid grid bounds [{omega_min}, {omega_max}]"),
            ));
        }
        Ok(FrequencyGrid {
            n_points,
            omega_min,
            omega_max,
            d_omega: (omega_max - omega_min) / (n_points - 1) as f64,
        })
    }

    /// 100 points on `[-20, 20]`.
    pub fn reference() -> Self {
        Self::new(100, -20.0, 20.0).expect("valid reference grid")
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn d_omega(&self) -> f64 {
        self.d_omega
    }

    pub fn span(&self) -> f64 {
        self.omega_max - self.omega_min
    }

    /// Grid point `j`. The last point is exactly `omega_max`.
    pub fn point(&self, j: usize) -> f64 {
        if j + 1 == self.n_points {
            self.omega_max
        } else {
            self.omega_min + self.span() * (j as f64) / ((self.n_points - 1) as f64)
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.point(j))
    }
}

/// Parameters of the tilted double-Gaussian joint spectral amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianJsaParams {
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Tilt in the `(ω_s, ω_i)` plane, radians.
    pub theta: f64,
    pub gain_b: f64,
}

impl GaussianJsaParams {
    /// The anticorrelated reference state: `σ_a = 6`, `σ_b = 2`, `θ = -π/4`.
    pub fn reference() -> Self {
        GaussianJsaParams {
            sigma_a: 6.0,
            sigma_b: 2.0,
            theta: -std::f64::consts::FRAC_PI_4,
            gain_b: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_a > 0.0 && self.sigma_a.is_finite()) {
            return Err(Error::config(
                MODULE,
                format!("sigma_a must be positive, got {}", self.sigma_a),
            ));
        }
        if !(self.sigma_b > 0.0 && self.sigma_b.is_finite()) {
            return Err(Error::config(
                MODULE,
                format!("sigma_b must be positive, got {}", self.sigma_b),
            ));
        }
        if !self.theta.is_finite() {
            return Err(Error::config(MODULE, "theta must be finite"));
        }
        if !(self.gain_b >= 0.0 && self.gain_b.is_finite()) {
            return Err(Error::config(
                MODULE,
                format!("gain must be non-negative, got {}", self.gain_b),
            ));
        }
        Ok(())
    }

    fn amplitude(&self, ws: f64, wi: f64) -> f64 {
        let (sin, cos) = self.theta.sin_cos();
        let u = ws * cos + wi * sin;
        let v = -ws * sin + wi * cos;
        (-u * u / (2.0 * self.sigma_a * self.sigma_a)).exp()
            * (-v * v / (2.0 * self.sigma_b * self.sigma_b)).exp()
    }
}

/// Fraction of the analytic `∫∫ |f|²` lying outside `grid × grid`.
///
/// `|f|²` is a bivariate normal density in `(ω_s, ω_i)`; the in-grid mass is
/// the integral over `ω_s` of its marginal times the conditional probability
/// that `ω_i` falls inside the grid.
pub fn off_grid_mass(params: &GaussianJsaParams, grid: &FrequencyGrid) -> f64 {
    let (sin, cos) = params.theta.sin_cos();
    let var_u = params.sigma_a * params.sigma_a / 2.0;
    let var_v = params.sigma_b * params.sigma_b / 2.0;
    let var_s = cos * cos * var_u + sin * sin * var_v;
    let var_i = sin * sin * var_u + cos * cos * var_v;
    let cov = cos * sin * (var_u - var_v);
    let sd_s = var_s.sqrt();
    let slope = cov / var_s;
    let sd_cond = (var_i - cov * cov / var_s).max(0.0).sqrt();

    let (lo, hi) = (grid.omega_min(), grid.omega_max());
    let norm_cdf = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    let a = lo.max(-12.0 * sd_s);
    let b = hi.min(12.0 * sd_s);
    if a >= b {
        return 1.0;
    }

    let integrand = |s: f64| {
        let density = (-s * s / (2.0 * var_s)).exp() / (sd_s * (2.0 * std::f64::consts::PI).sqrt());
        let mean = slope * s;
        let p_inside = if sd_cond == 0.0 {
            if (lo..=hi).contains(&mean) {
                1.0
            } else {
                0.0
            }
        } else {
            norm_cdf((hi - mean) / sd_cond) - norm_cdf((lo - mean) / sd_cond)
        };
        density * p_inside
    };

    // composite Simpson
    let intervals = 4000;
    let h = (b - a) / intervals as f64;
    let mut sum = integrand(a) + integrand(b);
    for j in 1..intervals {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(a + h * j as f64);
    }
    (1.0 - sum * h / 3.0).max(0.0)
}

/// Joint spectral amplitude sampled on the grid; rows are signal frequencies,
/// columns idler frequencies.
#[derive(Debug, Clone)]
pub struct JsaMatrix {
    values: CMatrix,
    grid: FrequencyGrid,
}

impl JsaMatrix {
    /// Wraps arbitrary samples, normalizing them so that
    /// `Σ |f|² d_omega² = 1`.
    pub fn from_samples(values: CMatrix, grid: FrequencyGrid) -> Result<Self> {
        let n = grid.n_points();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::config(
                MODULE,
                format!(
                    "JSA samples are {}x{}, grid has {n} points",
                    values.nrows(),
                    values.ncols()
                ),
            ));
        }
        let norm = values.norm() * grid.d_omega();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::numerical(
                MODULE,
                format!("JSA has zero or non-finite norm ({norm})"),
            ));
        }
        Ok(JsaMatrix {
            values: values / C64::new(norm, 0.0),
            grid,
        })
    }

    pub fn values(&self) -> &CMatrix {
        &self.values
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `Σ |f|² d_omega²`.
    pub fn norm_sqr(&self) -> f64 {
        self.values.norm_squared() * self.grid.d_omega().powi(2)
    }
}

pub fn build_gaussian_jsa(params: &GaussianJsaParams, grid: &FrequencyGrid) -> Result<JsaMatrix> {
    params.validate()?;
    let off = off_grid_mass(params, grid);
    if off > OFF_GRID_MASS_THRESHOLD {
        return Err(Error::Truncation {
            module: MODULE,
            off_grid_mass: off,
            threshold: OFF_GRID_MASS_THRESHOLD,
        });
    }
    let n = grid.n_points();
    let values = CMatrix::from_fn(n, n, |s, i| {
        C64::new(params.amplitude(grid.point(s), grid.point(i)), 0.0)
    });
    JsaMatrix::from_samples(values, *grid)
}

/// Schmidt modes, amplitudes and (optionally) gain-scaled squeezing
/// parameters of a joint spectral amplitude.
#[derive(Debug, Clone)]
pub struct SchmidtData {
    grid: FrequencyGrid,
    signal_modes: CMatrix,
    idler_modes: CMatrix,
    lambdas: Vec<f64>,
    tail_weight: f64,
    gain_b: Option<f64>,
    r_values: Option<Vec<f64>>,
}

impl SchmidtData {
    /// Assembles Schmidt data from explicit mode sets, for states that do not
    /// come from [`schmidt_decompose`]. Mode sets must be orthonormal under the
    /// grid quadrature.
    pub fn from_parts(
        grid: FrequencyGrid,
        signal_modes: CMatrix,
        idler_modes: CMatrix,
        lambdas: Vec<f64>,
        tail_weight: f64,
    ) -> Result<Self> {
        let n = grid.n_points();
        let k = lambdas.len();
        if k == 0 || k > n {
            return Err(Error::config(
                MODULE,
                format!("need between 1 and {n} modes, got {k}"),
            ));
        }
        for (name, m) in [("signal", &signal_modes), ("idler", &idler_modes)] {
            if m.nrows() != n || m.ncols() != k {
                return Err(Error::config(
                    MODULE,
                    format!(
                        "{name} modes are {}x{}, expected {n}x{k}",
                        m.nrows(),
                        m.ncols()
                    ),
                ));
            }
            let err = linalg::orthonormality_error(m, grid.d_omega());
            if err > 1e-10 {
                return Err(Error::contract(
                    MODULE,
                    format!("{name} modes not orthonormal (max deviation {err:.3e})"),
                ));
            }
        }
        if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::config(MODULE, "Schmidt amplitudes must be non-negative"));
        }
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config(MODULE, "Schmidt amplitudes must be descending"));
        }
        Ok(SchmidtData {
            grid,
            signal_modes,
            idler_modes,
            lambdas,
            tail_weight,
            gain_b: None,
            r_values: None,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Signal modes `ψ_k` as columns.
    pub fn signal_modes(&self) -> &CMatrix {
        &self.signal_modes
    }

    /// Idler modes `φ_k` as columns.
    pub fn idler_modes(&self) -> &CMatrix {
        &self.idler_modes
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn n_retained(&self) -> usize {
        self.lambdas.len()
    }

    /// `Σ_{k > n_retained} λ_k²`.
    pub fn tail_weight(&self) -> f64 {
        self.tail_weight
    }

    pub fn gain_b(&self) -> Option<f64> {
        self.gain_b
    }

    pub fn r_values(&self) -> Result<&[f64]> {
        self.r_values
            .as_deref()
            .ok_or_else(|| Error::state(MODULE, "gain has not been applied; r values are missing"))
    }

    /// `Σ_k λ_k ψ_k^*(ω_s) φ_k^*(ω_i)` over the retained modes.
    pub fn reconstruct(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.grid.n_points(), self.grid.n_points());
        for (k, &l) in self.lambdas.iter().enumerate() {
            let psi = self.signal_modes.column(k).conjugate();
            let phi = self.idler_modes.column(k).conjugate();
            out += psi * phi.transpose() * C64::new(l, 0.0);
        }
        out
    }

    /// Sets `r_k = gain_b · λ_k`.
    pub fn apply_gain(&self, gain_b: f64) -> Result<SchmidtData> {
        if !(gain_b >= 0.0 && gain_b.is_finite()) {
            return Err(Error::config(
                MODULE,
                format!("gain must be non-negative, got {gain_b}"),
            ));
        }
        let mut out = self.clone();
        out.gain_b = Some(gain_b);
        out.r_values = Some(self.lambdas.iter().map(|l| gain_b * l).collect());
        Ok(out)
    }

    /// Gain that puts `target_db` of squeezing into the first mode.
    pub fn gain_for_first_mode_db(&self, target_db: f64) -> Result<f64> {
        if !(target_db >= 0.0 && target_db.is_finite()) {
            return Err(Error::config(
                MODULE,
                format!("target squeezing must be non-negative, got {target_db} dB"),
            ));
        }
        let l1 = self.lambdas[0];
        if l1 <= 0.0 {
            return Err(Error::numerical(MODULE, "first Schmidt amplitude is zero"));
        }
        Ok(r_for_squeezing_db(target_db) / l1)
    }
}

/// Splits a sampled amplitude into modes following the convention
/// `f = Σ λ_k ψ_k^* φ_k^*`, retaining the `n_retained` largest amplitudes.
///
/// Returned amplitudes are the singular values of `values · d_omega`, so they
/// are normalized exactly when the input is.
pub(crate) fn decompose_amplitude(
    values: &CMatrix,
    grid: &FrequencyGrid,
    n_retained: usize,
    module: &'static str,
) -> Result<(CMatrix, CMatrix, Vec<f64>, f64)> {
    let n = grid.n_points();
    if n_retained == 0 || n_retained > n {
        return Err(Error::config(
            module,
            format!("n_retained must be in 1..={n}, got {n_retained}"),
        ));
    }
    let d = grid.d_omega();
    let svd = linalg::sorted_svd(&(values * C64::new(d, 0.0)), module)?;
    let scale = C64::new(1.0 / d.sqrt(), 0.0);
    let mut signal = svd.u.columns(0, n_retained).map(|z| z.conj() * scale);
    let mut idler = svd.v.columns(0, n_retained).map(|z| z * scale);
    for k in 0..n_retained {
        linalg::fix_phase(&mut signal, &mut idler, k);
    }
    let lambdas = svd.singular_values[..n_retained].to_vec();
    let tail = svd.singular_values[n_retained..].iter().map(|s| s * s).sum();
    Ok((signal, idler, lambdas, tail))
}

pub fn schmidt_decompose(jsa: &JsaMatrix, n_retained: usize) -> Result<SchmidtData> {
    let (signal, idler, lambdas, tail) =
        decompose_amplitude(jsa.values(), jsa.grid(), n_retained, MODULE)?;
    Ok(SchmidtData {
        grid: *jsa.grid(),
        signal_modes: signal,
        idler_modes: idler,
        lambdas,
        tail_weight: tail,
        gain_b: None,
        r_values: None,
    })
}

pub fn apply_gain(schmidt: &SchmidtData, gain_b: f64) -> Result<SchmidtData> {
    schmidt.apply_gain(gain_b)
}

/// EPR squeezing in dB of a two-mode squeezed state with parameter `r`:
/// `-10 log10(e^{-2r}) = 20 r log10(e)`.
pub fn squeezing_db(r: f64) -> f64 {
    20.0 * r * LOG10_E
}

/// Inverse of [`squeezing_db`].
pub fn r_for_squeezing_db(db: f64) -> f64 {
    db * LN_10 / 20.0
}
