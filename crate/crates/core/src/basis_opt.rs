//! Measurement bases derived from the filtered amplitude.
//!
//! The effective Schmidt basis decomposes `T_a(ω_s) T_b(ω_i) B f(ω_s, ω_i)`.
//! For real, identical signal and idler modes with a common squeezing
//! parameter, the filter kernel `Σ_k T(ω) ψ_k(ω) ψ_k(ω')` has its own
//! decomposition `Σ_k κ_k φ_k(ω) ξ_k(ω')`, in which the filter acts as plain
//! loss of transmissivity `κ_k²` on each mode.

use crate::error::{Error, Result};
use crate::filtering::{Filter, MeasurementBasis};
use crate::linalg::{self, CMatrix, C64};
use crate::spectral::{decompose_amplitude, FrequencyGrid, JsaMatrix, SchmidtData};

const MODULE: &str = "basis_opt";

#[derive(Debug, Clone)]
pub struct EffectiveSchmidt {
    grid: FrequencyGrid,
    signal_modes: CMatrix,
    idler_modes: CMatrix,
    r_primes: Vec<f64>,
    gain_b: f64,
}

impl EffectiveSchmidt {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn signal_modes(&self) -> &CMatrix {
        &self.signal_modes
    }

    pub fn idler_modes(&self) -> &CMatrix {
        &self.idler_modes
    }

    pub fn r_primes(&self) -> &[f64] {
        &self.r_primes
    }

    pub fn gain_b(&self) -> f64 {
        self.gain_b
    }

    pub fn n_retained(&self) -> usize {
        self.r_primes.len()
    }

    /// The leading `n_modes` pairs as a measurement basis.
    pub fn measurement_basis(&self, n_modes: usize) -> Result<MeasurementBasis> {
        if n_modes == 0 || n_modes > self.n_retained() {
            return Err(Error::config(
                MODULE,
                format!("requested {n_modes} of {} effective modes", self.n_retained()),
            ));
        }
        MeasurementBasis::new(
            &self.grid,
            self.signal_modes.columns(0, n_modes).into_owned(),
            self.idler_modes.columns(0, n_modes).into_owned(),
        )
    }

    /// Columns `omega, re_1, im_1, …` for the signal modes followed by the
    /// idler modes.
    pub fn modes_csv(&self) -> String {
        modes_csv(&self.grid, &[("signal", &self.signal_modes), ("idler", &self.idler_modes)])
    }
}

/// CSV of grid functions: `omega` then `<name>_<k>_re, <name>_<k>_im` for
/// every column of every named matrix.
pub fn modes_csv(grid: &FrequencyGrid, sets: &[(&str, &CMatrix)]) -> String {
    let mut header = vec!["omega".to_string()];
    for (name, m) in sets {
        for k in 0..m.ncols() {
            header.push(format!("{name}_{}_re", k + 1));
            header.push(format!("{name}_{}_im", k + 1));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for j in 0..grid.n_points() {
        let mut row = vec![format!("{:.16e}", grid.point(j))];
        for (_, m) in sets {
            for k in 0..m.ncols() {
                row.push(format!("{:.16e}", m[(j, k)].re));
                row.push(format!("{:.16e}", m[(j, k)].im));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn check_filter_grid(filter: &Filter, grid: &FrequencyGrid) -> Result<()> {
    if filter.grid() != grid {
        return Err(Error::config(
            MODULE,
            format!("filter grid {:?} does not match amplitude grid {grid:?}", filter.grid()),
        ));
    }
    Ok(())
}

/// Decomposes the filter-masked amplitude. Modes come from the unscaled
/// product and `r'_k = gain_b · λ'_k`.
pub fn svd_effective_basis(
    jsa: &JsaMatrix,
    gain_b: f64,
    filter_a: &Filter,
    filter_b: &Filter,
    n_retained: usize,
) -> Result<EffectiveSchmidt> {
    if !(gain_b >= 0.0 && gain_b.is_finite()) {
        return Err(Error::config(MODULE, format!("gain must be non-negative, got {gain_b}")));
    }
    let grid = jsa.grid();
    check_filter_grid(filter_a, grid)?;
    check_filter_grid(filter_b, grid)?;
    let ta = filter_a.transmission();
    let tb = filter_b.transmission();
    let masked = CMatrix::from_fn(grid.n_points(), grid.n_points(), |s, i| {
        ta[s] * tb[i] * jsa.values()[(s, i)]
    });
    let (signal, idler, lambdas, _) = decompose_amplitude(&masked, grid, n_retained, MODULE)?;
    Ok(EffectiveSchmidt {
        grid: *grid,
        signal_modes: signal,
        idler_modes: idler,
        r_primes: lambdas.iter().map(|l| gain_b * l).collect(),
        gain_b,
    })
}

#[derive(Debug, Clone)]
pub struct FilterModeDecomposition {
    pub kappas: Vec<f64>,
    /// `φ_k` as columns.
    pub out_modes: CMatrix,
    /// `ξ_k` as columns.
    pub in_modes: CMatrix,
}

impl FilterModeDecomposition {
    /// The output modes as a shared signal/idler measurement basis.
    pub fn measurement_basis(&self, grid: &FrequencyGrid, n_modes: usize) -> Result<MeasurementBasis> {
        if n_modes == 0 || n_modes > self.kappas.len() {
            return Err(Error::config(
                MODULE,
                format!("requested {n_modes} of {} filter modes", self.kappas.len()),
            ));
        }
        MeasurementBasis::shared(grid, self.out_modes.columns(0, n_modes).into_owned())
    }
}

/// Tolerance for the real, identical, uniform-gain preconditions.
const SPECIAL_CASE_TOL: f64 = 1e-12;

/// Decomposes `K(ω, ω') = Σ_k T(ω) ψ_k(ω) ψ_k(ω')` over the retained modes.
///
/// Requires real signal modes identical to the idler modes and, if a gain
/// has been applied, equal squeezing parameters for every retained mode.
pub fn filter_mode_decomposition(schmidt: &SchmidtData, filter: &Filter) -> Result<FilterModeDecomposition> {
    let grid = schmidt.grid();
    check_filter_grid(filter, grid)?;
    let psi = schmidt.signal_modes();
    let scale = psi.camax().max(1.0);
    let max_imag = psi.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag > SPECIAL_CASE_TOL * scale {
        return Err(Error::contract(
            MODULE,
            format!("signal modes are not real (max |Im| {max_imag:.3e})"),
        ));
    }
    let diff = (psi - schmidt.idler_modes()).camax();
    if diff > SPECIAL_CASE_TOL * scale {
        return Err(Error::contract(
            MODULE,
            format!("signal and idler modes differ (max deviation {diff:.3e})"),
        ));
    }
    if let Ok(r) = schmidt.r_values() {
        let (lo, hi) = r
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if hi - lo > SPECIAL_CASE_TOL * hi.max(1.0) {
            return Err(Error::contract(
                MODULE,
                format!("squeezing parameters are not uniform (range {lo} to {hi})"),
            ));
        }
    }
    if let Some(t) = filter.transmission().iter().find(|t| t.norm() > 1.0 + SPECIAL_CASE_TOL) {
        return Err(Error::contract(MODULE, format!("filter amplitude {t} exceeds 1")));
    }

    let d = grid.d_omega();
    let n_retained = schmidt.n_retained();
    let mut kernel = psi * psi.transpose();
    for (mut row, t) in kernel.row_iter_mut().zip(filter.transmission()) {
        row *= *t;
    }
    let svd = linalg::sorted_svd(&(kernel * C64::new(d, 0.0)), MODULE)?;
    let scale = C64::new(1.0 / d.sqrt(), 0.0);
    let mut out_modes = svd.u.columns(0, n_retained).map(|z| z * scale);
    let mut in_modes = svd.v.columns(0, n_retained).map(|z| z.conj() * scale);
    for k in 0..n_retained {
        linalg::fix_phase(&mut out_modes, &mut in_modes, k);
    }
    Ok(FilterModeDecomposition {
        kappas: svd.singular_values[..n_retained].to_vec(),
        out_modes,
        in_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::{make_gauss_filter, make_rect_filter};
    use crate::spectral::{build_gaussian_jsa, schmidt_decompose, GaussianJsaParams};

    fn reference() -> (JsaMatrix, SchmidtData) {
        let grid = FrequencyGrid::reference();
        let jsa = build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap();
        let s = schmidt_decompose(&jsa, 10).unwrap();
        (jsa, s)
    }

    #[test]
    fn identity_filters_reproduce_schmidt() {
        let (jsa, s) = reference();
        let id = Filter::identity(jsa.grid());
        let e = svd_effective_basis(&jsa, 1.5, &id, &id, 10).unwrap();
        for k in 0..10 {
            assert!((e.r_primes()[k] - 1.5 * s.lambdas()[k]).abs() < 1e-12);
        }
        // non-degenerate leading modes are equal after the phase convention
        for k in 0..5 {
            let diff = (e.signal_modes().column(k) - s.signal_modes().column(k)).camax();
            assert!(diff < 1e-8, "mode {k}: {diff}");
        }
    }

    #[test]
    fn effective_modes_live_in_passband() {
        let (jsa, s) = reference();
        let g = *jsa.grid();
        let f = make_rect_filter(0.0, 4.0, &g).unwrap();
        let e = svd_effective_basis(&jsa, 1.0, &f, &f, 5).unwrap();
        assert!(e.r_primes()[0] < s.lambdas()[0]);
        for k in 0..5 {
            for j in 0..g.n_points() {
                if f.transmission()[j].norm() == 0.0 {
                    assert!(e.signal_modes()[(j, k)].norm() < 1e-12);
                    assert!(e.idler_modes()[(j, k)].norm() < 1e-12);
                }
            }
        }
        assert!(linalg::orthonormality_error(e.signal_modes(), g.d_omega()) < 1e-10);
    }

    #[test]
    fn contraction_under_gaussian_filter() {
        let (jsa, s) = reference();
        let g = *jsa.grid();
        let fa = make_gauss_filter(0.7, 5.0, &g).unwrap();
        let fb = make_gauss_filter(-1.1, 8.0, &g).unwrap();
        let e = svd_effective_basis(&jsa, 2.0, &fa, &fb, 10).unwrap();
        for k in 0..10 {
            assert!(e.r_primes()[k] <= 2.0 * s.lambdas()[k] + 1e-12);
        }
    }

    #[test]
    fn narrow_offset_passbands_decompose() {
        // few surviving entries, mostly exact zeros
        let (jsa, s) = reference();
        let g = *jsa.grid();
        let fa = make_rect_filter(5.473237568614799, 1.9227128423642366, &g).unwrap();
        let fb = make_rect_filter(-4.658641943092373, 0.26032518687311995, &g).unwrap();
        let e = svd_effective_basis(&jsa, 1.0, &fa, &fb, 10).unwrap();
        assert!(e.r_primes()[0] > 0.0 && e.r_primes()[0] < s.lambdas()[0]);
        assert!(e.r_primes()[1] < 1e-12);
    }

    #[test]
    fn negative_gain_rejected() {
        let (jsa, _) = reference();
        let id = Filter::identity(jsa.grid());
        assert!(matches!(
            svd_effective_basis(&jsa, -1.0, &id, &id, 3),
            Err(Error::Config { .. })
        ));
    }

    fn symmetric_state(n_points: usize, n_modes: usize) -> SchmidtData {
        let grid = FrequencyGrid::new(n_points, -20.0, 20.0).unwrap();
        let jsa = build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap();
        let s = schmidt_decompose(&jsa, n_modes).unwrap();
        let psi = s.signal_modes().map(|z| C64::new(z.re, 0.0));
        let lambda = 1.0 / (n_modes as f64).sqrt();
        SchmidtData::from_parts(grid, psi.clone(), psi, vec![lambda; n_modes], 0.0).unwrap()
    }

    #[test]
    fn unit_filter_gives_unit_kappas() {
        let s = symmetric_state(100, 6);
        let d = filter_mode_decomposition(&s, &Filter::identity(s.grid())).unwrap();
        assert!(d.kappas.iter().all(|k| (k - 1.0).abs() < 1e-12));
        // same span: projecting φ onto the ψ subspace loses nothing
        let dw = C64::new(s.grid().d_omega(), 0.0);
        let proj = s.signal_modes().transpose() * d.out_modes.clone() * dw;
        for k in 0..6 {
            assert!((proj.column(k).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn blocking_filter_gives_zero_kappas() {
        let s = symmetric_state(100, 4);
        let d = filter_mode_decomposition(&s, &Filter::blocking(s.grid())).unwrap();
        assert!(d.kappas.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn kappas_are_contractions() {
        let s = symmetric_state(100, 8);
        let f = make_rect_filter(0.0, 4.0, s.grid()).unwrap();
        let d = filter_mode_decomposition(&s, &f).unwrap();
        assert!(d.kappas.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.kappas.iter().all(|&k| (0.0..=1.0 + 1e-12).contains(&k)));
        assert!(d.out_modes.iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn preconditions_enforced() {
        let (_, s) = reference();
        let f = Filter::identity(s.grid());
        // anticorrelated reference state has distinct signal and idler modes
        assert!(matches!(filter_mode_decomposition(&s, &f), Err(Error::Contract { .. })));
        let (_, s) = reference();
        let psi = s.signal_modes().columns(0, 3).map(|z| C64::new(z.re, 0.0));
        let nonuniform = SchmidtData::from_parts(*s.grid(), psi.clone(), psi, vec![0.7, 0.5, 0.3], 0.0)
            .unwrap()
            .apply_gain(1.0)
            .unwrap();
        assert!(matches!(
            filter_mode_decomposition(&nonuniform, &f),
            Err(Error::Contract { .. })
        ));
    }
}
