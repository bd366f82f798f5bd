//! EPR variances, squeezing in dB, Gaussian purity and single-mode character.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::covariance::{symplectic_eigenvalues, CovarianceMatrix};
use crate::error::{Error, Result};

const MODULE: &str = "metrics";

/// Allowed disagreement between the two purity routes.
pub const PURITY_CROSS_CHECK_TOL: f64 = 1e-9;

/// Which joint quadrature pair is squeezed: `minus` means `X_a - X_b` and
/// `Y_a + Y_b`, `plus` means `X_a + X_b` and `Y_a - Y_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureCombination {
    Minus,
    Plus,
}

impl std::fmt::Display for QuadratureCombination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuadratureCombination::Minus => "minus",
            QuadratureCombination::Plus => "plus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSqueezing {
    /// Zero-based optical mode index.
    pub mode_index: usize,
    pub delta2_minus: f64,
    pub delta2_plus: f64,
    pub squeezing_db: f64,
    pub combination: QuadratureCombination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSqueezingReport {
    pub modes: Vec<ModeSqueezing>,
}

impl ModeSqueezingReport {
    pub fn squeezing_db(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.squeezing_db).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode_index,delta2_minus,delta2_plus,squeezing_db,combination\n");
        for m in &self.modes {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{}\n",
                m.mode_index + 1,
                m.delta2_minus,
                m.delta2_plus,
                m.squeezing_db,
                m.combination
            ));
        }
        out
    }
}

/// `(Δ²X_(−), Δ²X_(+))` of mode `k` (zero-based), normalized so that the
/// vacuum gives `(1, 1)`.
pub fn epr_variances(cov: &CovarianceMatrix, k: usize) -> Result<(f64, f64)> {
    if k >= cov.n_modes() {
        return Err(Error::config(
            MODULE,
            format!("mode index {k} out of range for {} modes", cov.n_modes()),
        ));
    }
    let s = cov.sigma();
    let o = 4 * k;
    let (a, b, e, f) = (s[(o, o)], s[(o + 2, o + 2)], s[(o, o + 2)], s[(o + 2, o)]);
    Ok((a + b - e - f, a + b + e + f))
}

pub fn mode_squeezing_db(cov: &CovarianceMatrix, k: usize) -> Result<ModeSqueezing> {
    let (minus, plus) = epr_variances(cov, k)?;
    if !(minus > 0.0 && plus > 0.0) {
        return Err(Error::numerical(
            MODULE,
            format!("non-positive EPR variance in mode {k}: ({minus:.6e}, {plus:.6e})"),
        ));
    }
    let db_minus = -10.0 * minus.log10();
    let db_plus = -10.0 * plus.log10();
    let (squeezing_db, combination) = if db_plus > db_minus {
        (db_plus, QuadratureCombination::Plus)
    } else {
        (db_minus, QuadratureCombination::Minus)
    };
    Ok(ModeSqueezing {
        mode_index: k,
        delta2_minus: minus,
        delta2_plus: plus,
        squeezing_db,
        combination,
    })
}

pub fn squeezing_report(cov: &CovarianceMatrix) -> Result<ModeSqueezingReport> {
    Ok(ModeSqueezingReport {
        modes: (0..cov.n_modes())
            .map(|k| mode_squeezing_db(cov, k))
            .collect::<Result<_>>()?,
    })
}

/// `1 / (2^M sqrt(det σ))` for `M` bosonic modes.
pub fn purity_from_determinant(cov: &CovarianceMatrix) -> Result<f64> {
    let chol = Cholesky::new(cov.sigma().clone()).ok_or_else(|| {
        Error::numerical(MODULE, "covariance matrix is not positive definite; det ≤ 0")
    })?;
    let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    let m = (cov.sigma().nrows() / 2) as f64;
    Ok((-m * std::f64::consts::LN_2 - 0.5 * log_det).exp())
}

/// `Π 1 / (2ν_j)` over the symplectic eigenvalues.
pub fn purity_from_symplectic(cov: &CovarianceMatrix) -> Result<f64> {
    let nu = symplectic_eigenvalues(cov.sigma())?;
    Ok(nu.iter().map(|v| (0.5 / v).ln()).sum::<f64>().exp())
}

/// Purity of the Gaussian state by the determinant formula, cross-checked
/// against the symplectic spectrum.
pub fn purity(cov: &CovarianceMatrix) -> Result<f64> {
    let det = purity_from_determinant(cov)?;
    let sym = purity_from_symplectic(cov)?;
    if (det - sym).abs() > PURITY_CROSS_CHECK_TOL {
        return Err(Error::numerical(
            MODULE,
            format!("purity routes disagree: determinant {det:.15e}, symplectic {sym:.15e}"),
        ));
    }
    Ok(det)
}

/// First-mode squeezing over the summed squeezing of all other modes, with
/// negative values counted as zero. Infinite when no other mode is squeezed.
pub fn single_mode_character(modes: &[ModeSqueezing]) -> Result<f64> {
    let (first, rest) = modes
        .split_first()
        .ok_or_else(|| Error::config(MODULE, "single-mode character needs at least one mode"))?;
    let denom: f64 = rest.iter().map(|m| m.squeezing_db.max(0.0)).sum();
    let numer = first.squeezing_db.max(0.0);
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(numer / denom)
}
