//! Spectral filters as frequency-dependent beam splitters, and the filtered
//! projection kernels of a PDC state onto a measurement basis.
//!
//! A filter maps `a(ω) → T(ω) a(ω) + R(ω) v(ω)` with `|T|² + |R|² = 1`. After
//! the down-conversion Bogoliubov transform
//!
//! ```text
//! U_a(ω, ω') = δ(ω - ω') + Σ_k ψ_k^*(ω) (cosh r_k - 1) ψ_k(ω')
//! V_a(ω, ω') = Σ_k ψ_k^*(ω) sinh r_k φ_k^*(ω')
//! ```
//!
//! (and the idler analogues with `ψ ↔ φ`), a measured signal mode `f_k`
//! collects
//!
//! ```text
//! U_a^k(ω') = ∫ dω f_k(ω) T_a(ω) U_a(ω, ω')
//! V_a^k(ω') = ∫ dω f_k(ω) T_a(ω) V_a(ω, ω')
//! R_a^k(ω)  = f_k(ω) R_a(ω)
//! ```
//!
//! The `δ` term keeps the unretained part of the spectrum as vacuum, so the
//! transform stays canonical for any measurement basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::spectral::{FrequencyGrid, SchmidtData};

const MODULE: &str = "filtering";

/// Slack on the rectangular passband edge, relative to the grid span, so that
/// points meant to lie exactly on the edge survive rounding.
const EDGE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Rectangular,
    Gaussian,
    Identity,
    Blocking,
    /// Frequency-independent transmission amplitude.
    Flat,
    /// User-supplied samples.
    Custom,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterKind::Rectangular => "rectangular",
            FilterKind::Gaussian => "gaussian",
            FilterKind::Identity => "identity",
            FilterKind::Blocking => "blocking",
            FilterKind::Flat => "flat",
            FilterKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Complex transmission amplitude sampled on the grid. The reflection
/// amplitude is always derived as `sqrt(1 - |T|²)`.
#[derive(Debug, Clone)]
pub struct Filter {
    kind: FilterKind,
    center: f64,
    width: f64,
    grid: FrequencyGrid,
    transmission: Vec<C64>,
}

impl Filter {
    pub fn identity(grid: &FrequencyGrid) -> Self {
        Filter {
            kind: FilterKind::Identity,
            center: 0.0,
            width: f64::INFINITY,
            grid: *grid,
            transmission: vec![C64::new(1.0, 0.0); grid.n_points()],
        }
    }

    pub fn blocking(grid: &FrequencyGrid) -> Self {
        Filter {
            kind: FilterKind::Blocking,
            center: 0.0,
            width: 0.0,
            grid: *grid,
            transmission: vec![C64::new(0.0, 0.0); grid.n_points()],
        }
    }

    /// `T(ω) ≡ amplitude`, i.e. ordinary loss with transmissivity
    /// `amplitude²`.
    pub fn flat(amplitude: f64, grid: &FrequencyGrid) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::config(
                MODULE,
                format!("flat transmission amplitude must lie in [0, 1], got {amplitude}"),
            ));
        }
        Ok(Filter {
            kind: FilterKind::Flat,
            center: 0.0,
            width: f64::INFINITY,
            grid: *grid,
            transmission: vec![C64::new(amplitude, 0.0); grid.n_points()],
        })
    }

    pub fn from_transmission(grid: &FrequencyGrid, transmission: Vec<C64>) -> Result<Self> {
        if transmission.len() != grid.n_points() {
            return Err(Error::config(
                MODULE,
                format!(
                    "{} transmission samples for a {}-point grid",
                    transmission.len(),
                    grid.n_points()
                ),
            ));
        }
        if let Some(t) = transmission.iter().find(|t| !(t.norm() <= 1.0)) {
            return Err(Error::config(
                MODULE,
                format!("transmission amplitude {t} exceeds 1 in magnitude"),
            ));
        }
        Ok(Filter {
            kind: FilterKind::Custom,
            center: f64::NAN,
            width: f64::NAN,
            grid: *grid,
            transmission,
        })
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Full passband width for rectangular filters, amplitude FWHM for
    /// Gaussian ones.
    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn transmission(&self) -> &[C64] {
        &self.transmission
    }

    pub fn reflection(&self) -> Vec<f64> {
        self.transmission
            .iter()
            .map(|t| (1.0 - t.norm_sqr()).max(0.0).sqrt())
            .collect()
    }
}

/// Rectangular passband `|ω - center| ≤ width / 2`; points on the edge pass.
pub fn make_rect_filter(center: f64, width: f64, grid: &FrequencyGrid) -> Result<Filter> {
    if !(width >= 0.0) || !center.is_finite() {
        return Err(Error::config(
            MODULE,
            format!("rectangular filter needs width >= 0 and finite center, got width {width}, center {center}"),
        ));
    }
    let half = width / 2.0 + EDGE_RTOL * grid.span();
    let transmission = grid
        .points()
        .map(|w| {
            if (w - center).abs() <= half {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(Filter {
        kind: FilterKind::Rectangular,
        center,
        width,
        grid: *grid,
        transmission,
    })
}

/// Gaussian amplitude filter `T(ω) = exp[-4 ln2 (ω - center)² / fwhm²]`.
pub fn make_gauss_filter(center: f64, fwhm: f64, grid: &FrequencyGrid) -> Result<Filter> {
    if !(fwhm > 0.0) || !center.is_finite() {
        return Err(Error::config(
            MODULE,
            format!("gaussian filter needs fwhm > 0 and finite center, got fwhm {fwhm}, center {center}"),
        ));
    }
    let transmission = grid
        .points()
        .map(|w| {
            let x = (w - center) / fwhm;
            C64::new((-4.0 * std::f64::consts::LN_2 * x * x).exp(), 0.0)
        })
        .collect();
    Ok(Filter {
        kind: FilterKind::Gaussian,
        center,
        width: fwhm,
        grid: *grid,
        transmission,
    })
}

/// Orthonormal signal and idler mode sets `{f_k}`, `{g_k}` in which the
/// filtered state is measured.
#[derive(Debug, Clone)]
pub struct MeasurementBasis {
    grid: FrequencyGrid,
    signal: CMatrix,
    idler: CMatrix,
}

impl MeasurementBasis {
    pub const ORTHONORMALITY_TOL: f64 = 1e-10;

    pub fn new(grid: &FrequencyGrid, signal: CMatrix, idler: CMatrix) -> Result<Self> {
        let n = grid.n_points();
        if signal.nrows() != n || idler.nrows() != n {
            return Err(Error::config(
                MODULE,
                format!(
                    "basis functions have {} / {} samples, grid has {n}",
                    signal.nrows(),
                    idler.nrows()
                ),
            ));
        }
        if signal.ncols() != idler.ncols() || signal.ncols() == 0 {
            return Err(Error::config(
                MODULE,
                format!(
                    "signal and idler bases need the same non-zero mode count, got {} and {}",
                    signal.ncols(),
                    idler.ncols()
                ),
            ));
        }
        for (name, m) in [("signal", &signal), ("idler", &idler)] {
            let err = linalg::orthonormality_error(m, grid.d_omega());
            if err > Self::ORTHONORMALITY_TOL {
                return Err(Error::contract(
                    MODULE,
                    format!("{name} measurement basis not orthonormal (max deviation {err:.3e})"),
                ));
            }
        }
        Ok(MeasurementBasis {
            grid: *grid,
            signal,
            idler,
        })
    }

    /// One mode set used for both arms.
    pub fn shared(grid: &FrequencyGrid, modes: CMatrix) -> Result<Self> {
        Self::new(grid, modes.clone(), modes)
    }

    /// The first `n_modes` Schmidt modes of a state.
    pub fn schmidt(schmidt: &SchmidtData, n_modes: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > schmidt.n_retained() {
            return Err(Error::config(
                MODULE,
                format!(
                    "requested {n_modes} measurement modes from {} retained Schmidt modes",
                    schmidt.n_retained()
                ),
            ));
        }
        Self::new(
            schmidt.grid(),
            schmidt.signal_modes().columns(0, n_modes).into_owned(),
            schmidt.idler_modes().columns(0, n_modes).into_owned(),
        )
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn signal(&self) -> &CMatrix {
        &self.signal
    }

    pub fn idler(&self) -> &CMatrix {
        &self.idler
    }

    pub fn n_modes(&self) -> usize {
        self.signal.ncols()
    }
}

/// Dense two-frequency Bogoliubov kernels, rows indexed by `ω`, columns by
/// `ω'`. The identity part is stored as `δ_{ωω'} / d_omega`.
#[derive(Debug, Clone)]
pub struct UvKernels {
    pub u_a: CMatrix,
    pub u_b: CMatrix,
    pub v_a: CMatrix,
    pub v_b: CMatrix,
    /// Schmidt weight beyond the retained modes; those modes are treated as
    /// unsqueezed.
    pub tail_weight: f64,
    /// Upper bound on the squeezing parameter of any neglected mode,
    /// `B · sqrt(tail_weight)`.
    pub max_neglected_r: f64,
}

pub fn build_uv_kernels(schmidt: &SchmidtData) -> Result<UvKernels> {
    let r = schmidt.r_values()?;
    let grid = schmidt.grid();
    let n = grid.n_points();
    let d = grid.d_omega();
    let psi = schmidt.signal_modes();
    let phi = schmidt.idler_modes();

    let cosh_m1 = diag(r.iter().map(|r| r.cosh() - 1.0));
    let sinh = diag(r.iter().map(|r| r.sinh()));
    let identity = CMatrix::identity(n, n) * C64::new(1.0 / d, 0.0);

    let psi_c = psi.conjugate();
    let phi_c = phi.conjugate();
    Ok(UvKernels {
        u_a: &identity + &psi_c * &cosh_m1 * psi.transpose(),
        v_a: &psi_c * &sinh * phi_c.transpose(),
        u_b: &identity + &phi_c * &cosh_m1 * phi.transpose(),
        v_b: &phi_c * &sinh * psi_c.transpose(),
        tail_weight: schmidt.tail_weight(),
        max_neglected_r: schmidt.gain_b().unwrap_or(0.0) * schmidt.tail_weight().sqrt(),
    })
}

fn diag(values: impl Iterator<Item = f64>) -> CMatrix {
    let v: Vec<C64> = values.map(|x| C64::new(x, 0.0)).collect();
    CMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
}

/// What a [`ProjectionSet`] was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub filter_a: FilterKind,
    pub filter_b: FilterKind,
    pub n_retained: usize,
    pub tail_weight: f64,
    pub gain_b: Option<f64>,
    pub n_modes: usize,
}

/// Filtered projection kernels; column `k` of each matrix is the grid
/// function for measured mode `k`.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub grid: FrequencyGrid,
    pub u_a: CMatrix,
    pub u_b: CMatrix,
    pub v_a: CMatrix,
    pub v_b: CMatrix,
    pub r_a: CMatrix,
    pub r_b: CMatrix,
    pub provenance: Provenance,
}

impl ProjectionSet {
    pub fn n_modes(&self) -> usize {
        self.u_a.ncols()
    }
}

fn check_grids(
    schmidt: &SchmidtData,
    filter_a: &Filter,
    filter_b: &Filter,
    basis: Option<&MeasurementBasis>,
) -> Result<()> {
    let g = schmidt.grid();
    let mismatch = |what: &str, other: &FrequencyGrid| {
        Error::config(
            MODULE,
            format!("{what} grid {other:?} does not match state grid {g:?}"),
        )
    };
    if filter_a.grid() != g {
        return Err(mismatch("signal filter", filter_a.grid()));
    }
    if filter_b.grid() != g {
        return Err(mismatch("idler filter", filter_b.grid()));
    }
    if let Some(b) = basis {
        if b.grid() != g {
            return Err(mismatch("measurement basis", b.grid()));
        }
    }
    Ok(())
}

fn weighted_columns(modes: &CMatrix, weights: &[C64]) -> CMatrix {
    let mut out = modes.clone();
    for mut col in out.column_iter_mut() {
        for (z, w) in col.iter_mut().zip(weights) {
            *z *= w;
        }
    }
    out
}

fn reflection_columns(modes: &CMatrix, filter: &Filter) -> CMatrix {
    let refl: Vec<C64> = filter
        .reflection()
        .into_iter()
        .map(|r| C64::new(r, 0.0))
        .collect();
    weighted_columns(modes, &refl)
}

/// Projection kernels by explicit quadrature against the dense kernels.
pub fn filtered_projections(
    schmidt: &SchmidtData,
    filter_a: &Filter,
    filter_b: &Filter,
    basis: &MeasurementBasis,
) -> Result<ProjectionSet> {
    check_grids(schmidt, filter_a, filter_b, Some(basis))?;
    let kernels = build_uv_kernels(schmidt)?;
    let d = C64::new(schmidt.grid().d_omega(), 0.0);

    let ft = weighted_columns(basis.signal(), filter_a.transmission());
    let gt = weighted_columns(basis.idler(), filter_b.transmission());

    Ok(ProjectionSet {
        grid: *schmidt.grid(),
        u_a: kernels.u_a.transpose() * &ft * d,
        v_a: kernels.v_a.transpose() * &ft * d,
        u_b: kernels.u_b.transpose() * &gt * d,
        v_b: kernels.v_b.transpose() * &gt * d,
        r_a: reflection_columns(basis.signal(), filter_a),
        r_b: reflection_columns(basis.idler(), filter_b),
        provenance: Provenance {
            filter_a: filter_a.kind(),
            filter_b: filter_b.kind(),
            n_retained: schmidt.n_retained(),
            tail_weight: schmidt.tail_weight(),
            gain_b: schmidt.gain_b(),
            n_modes: basis.n_modes(),
        },
    })
}

/// Same projections as [`filtered_projections`] evaluated through the
/// low-rank structure of the kernels, in `O(n · n_retained)` per mode instead
/// of `O(n²)`. Used inside optimization loops.
#[derive(Debug, Clone)]
pub struct Projector {
    grid: FrequencyGrid,
    filter_a: Filter,
    filter_b: Filter,
    psi: CMatrix,
    phi: CMatrix,
    /// `T_a(ω) ψ_j^*(ω) dω` as columns.
    overlap_a: CMatrix,
    /// `T_b(ω) φ_j^*(ω) dω` as columns.
    overlap_b: CMatrix,
    cosh_m1: CMatrix,
    sinh: CMatrix,
    provenance_base: Provenance,
}

impl Projector {
    pub fn new(schmidt: &SchmidtData, filter_a: &Filter, filter_b: &Filter) -> Result<Self> {
        check_grids(schmidt, filter_a, filter_b, None)?;
        let r = schmidt.r_values()?;
        let d = C64::new(schmidt.grid().d_omega(), 0.0);
        let psi = schmidt.signal_modes().clone();
        let phi = schmidt.idler_modes().clone();
        Ok(Projector {
            grid: *schmidt.grid(),
            overlap_a: weighted_columns(&psi.conjugate(), filter_a.transmission()) * d,
            overlap_b: weighted_columns(&phi.conjugate(), filter_b.transmission()) * d,
            psi,
            phi,
            cosh_m1: diag(r.iter().map(|r| r.cosh() - 1.0)),
            sinh: diag(r.iter().map(|r| r.sinh())),
            filter_a: filter_a.clone(),
            filter_b: filter_b.clone(),
            provenance_base: Provenance {
                filter_a: filter_a.kind(),
                filter_b: filter_b.kind(),
                n_retained: schmidt.n_retained(),
                tail_weight: schmidt.tail_weight(),
                gain_b: schmidt.gain_b(),
                n_modes: 0,
            },
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Projections for measurement functions given as columns of `signal`
    /// and `idler`; orthonormality is the caller's responsibility.
    pub fn project_unchecked(&self, signal: &CMatrix, idler: &CMatrix) -> ProjectionSet {
        // alpha[j, k] = ∫ f_k T_a ψ_j^*,  beta[j, k] = ∫ g_k T_b φ_j^*
        let alpha = self.overlap_a.transpose() * signal;
        let beta = self.overlap_b.transpose() * idler;
        let ft = weighted_columns(signal, self.filter_a.transmission());
        let gt = weighted_columns(idler, self.filter_b.transmission());
        let mut provenance = self.provenance_base.clone();
        provenance.n_modes = signal.ncols();
        ProjectionSet {
            grid: self.grid,
            u_a: ft + &self.psi * (&self.cosh_m1 * &alpha),
            v_a: self.phi.conjugate() * (&self.sinh * &alpha),
            u_b: gt + &self.phi * (&self.cosh_m1 * &beta),
            v_b: self.psi.conjugate() * (&self.sinh * &beta),
            r_a: reflection_columns(signal, &self.filter_a),
            r_b: reflection_columns(idler, &self.filter_b),
            provenance,
        }
    }

    pub fn project(&self, basis: &MeasurementBasis) -> Result<ProjectionSet> {
        if basis.grid() != &self.grid {
            return Err(Error::config(MODULE, "measurement basis grid does not match state grid"));
        }
        Ok(self.project_unchecked(basis.signal(), basis.idler()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_gaussian_jsa, schmidt_decompose, GaussianJsaParams};

    fn reference_state(db: f64) -> SchmidtData {
        let grid = FrequencyGrid::reference();
        let s = schmidt_decompose(
            &build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap(),
            10,
        )
        .unwrap();
        let b = s.gain_for_first_mode_db(db).unwrap();
        s.apply_gain(b).unwrap()
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn wide_rect_is_identity() {
        let g = FrequencyGrid::reference();
        let f = make_rect_filter(0.0, g.span(), &g).unwrap();
        assert!(f.transmission().iter().all(|t| *t == C64::new(1.0, 0.0)));
        let f = make_rect_filter(0.0, 1e3, &g).unwrap();
        assert!(f.transmission().iter().all(|t| *t == C64::new(1.0, 0.0)));
    }

    #[test]
    fn zero_width_rect() {
        // no grid point at 0 for an even point count
        let g = FrequencyGrid::reference();
        let f = make_rect_filter(0.0, 0.0, &g).unwrap();
        assert!(f.transmission().iter().all(|t| t.norm() == 0.0));
        // odd count puts a point at the center
        let g = FrequencyGrid::new(101, -20.0, 20.0).unwrap();
        let f = make_rect_filter(0.0, 0.0, &g).unwrap();
        let passed: Vec<usize> = (0..101).filter(|&j| f.transmission()[j].norm() > 0.0).collect();
        assert_eq!(passed, vec![50]);
    }

    #[test]
    fn rect_edge_points_transmit() {
        let g = FrequencyGrid::new(41, -20.0, 20.0).unwrap();
        let f = make_rect_filter(0.0, 4.0, &g).unwrap();
        let passed: Vec<f64> = g
            .points()
            .zip(f.transmission())
            .filter(|(_, t)| t.norm() > 0.0)
            .map(|(w, _)| w)
            .collect();
        assert_eq!(passed.len(), 5);
        assert!((passed[0] + 2.0).abs() < 1e-12 && (passed[4] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn energy_split_is_exact() {
        let g = FrequencyGrid::reference();
        for f in [
            make_rect_filter(0.3, 5.0, &g).unwrap(),
            make_gauss_filter(-1.0, 3.0, &g).unwrap(),
            Filter::identity(&g),
            Filter::blocking(&g),
            Filter::flat(0.5_f64.sqrt(), &g).unwrap(),
        ] {
            for (t, r) in f.transmission().iter().zip(f.reflection()) {
                assert!((t.norm_sqr() + r * r - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gaussian_filter_fwhm() {
        let g = FrequencyGrid::new(41, -20.0, 20.0).unwrap();
        let f = make_gauss_filter(0.0, 4.0, &g).unwrap();
        assert!((f.transmission()[20].re - 1.0).abs() < 1e-15);
        assert!((f.transmission()[18].re - 0.5).abs() < 1e-12);
        assert!((f.transmission()[22].re - 0.5).abs() < 1e-12);
        let wide = make_gauss_filter(0.0, 1e9, &g).unwrap();
        assert!(wide.transmission().iter().all(|t| (t.re - 1.0).abs() < 1e-12));
        assert!(matches!(make_gauss_filter(0.0, 0.0, &g), Err(Error::Config { .. })));
        assert!(matches!(make_gauss_filter(0.0, -1.0, &g), Err(Error::Config { .. })));
    }

    #[test]
    fn custom_filter_rejects_gain() {
        let g = FrequencyGrid::new(3, 0.0, 1.0).unwrap();
        assert!(Filter::from_transmission(&g, vec![C64::new(1.1, 0.0); 3]).is_err());
        assert!(Filter::from_transmission(&g, vec![C64::new(0.0, 1.0); 3]).is_ok());
    }

    #[test]
    fn kernels_require_gain() {
        let grid = FrequencyGrid::reference();
        let s = schmidt_decompose(
            &build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap(),
            5,
        )
        .unwrap();
        assert!(matches!(build_uv_kernels(&s), Err(Error::State { .. })));
    }

    #[test]
    fn zero_gain_kernels_are_identity_and_zero() {
        let s = reference_state(0.0);
        let k = build_uv_kernels(&s).unwrap();
        let d = s.grid().d_omega();
        let id = CMatrix::identity(100, 100) * C64::new(1.0 / d, 0.0);
        assert!(max_abs(&(&k.u_a - &id)) < 1e-12);
        assert!(max_abs(&(&k.u_b - &id)) < 1e-12);
        assert_eq!(max_abs(&k.v_a), 0.0);
        assert_eq!(max_abs(&k.v_b), 0.0);
    }

    #[test]
    fn single_mode_gain_gives_rank_one_sinh() {
        let grid = FrequencyGrid::reference();
        let s = schmidt_decompose(
            &build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap(),
            4,
        )
        .unwrap();
        let single = SchmidtData::from_parts(
            grid,
            s.signal_modes().clone(),
            s.idler_modes().clone(),
            vec![1.0, 0.0, 0.0, 0.0],
            0.0,
        )
        .unwrap()
        .apply_gain(0.7)
        .unwrap();
        let k = build_uv_kernels(&single).unwrap();
        let svd = linalg::sorted_svd(&k.v_a, "test").unwrap();
        assert!(svd.singular_values[0] > 0.1);
        assert!(svd.singular_values[1] < 1e-12 * svd.singular_values[0]);
    }

    #[test]
    fn kernel_diagonal_action_on_schmidt_modes() {
        let s = reference_state(6.0);
        let k = build_uv_kernels(&s).unwrap();
        let d = C64::new(s.grid().d_omega(), 0.0);
        let r = s.r_values().unwrap();
        for j in 0..s.n_retained() {
            let psi = s.signal_modes().column(j);
            // ∫∫ ψ_j(ω) U_a(ω, ω') ψ_j^*(ω') dω dω'
            let v = (psi.transpose() * &k.u_a * psi.conjugate())[(0, 0)] * d * d;
            assert!((v.re - r[j].cosh()).abs() < 1e-10 && v.im.abs() < 1e-10);
            let phi = s.idler_modes().column(j);
            let w = (psi.transpose() * &k.v_a * phi)[(0, 0)] * d * d;
            assert!((w.re - r[j].sinh()).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_filter_schmidt_basis_projections() {
        let s = reference_state(6.0);
        let g = *s.grid();
        let basis = MeasurementBasis::schmidt(&s, 5).unwrap();
        let id = Filter::identity(&g);
        let p = filtered_projections(&s, &id, &id, &basis).unwrap();
        let r = s.r_values().unwrap();
        for k in 0..5 {
            let psi = s.signal_modes().column(k);
            let phi = s.idler_modes().column(k);
            for j in 0..g.n_points() {
                assert!((p.u_a[(j, k)] - psi[j] * r[k].cosh()).norm() < 1e-10);
                assert!((p.v_a[(j, k)] - phi[j].conj() * r[k].sinh()).norm() < 1e-10);
                assert_eq!(p.r_a[(j, k)].norm(), 0.0);
            }
        }
    }

    #[test]
    fn blocking_filter_projections() {
        let s = reference_state(6.0);
        let g = *s.grid();
        let basis = MeasurementBasis::schmidt(&s, 3).unwrap();
        let b = Filter::blocking(&g);
        let p = filtered_projections(&s, &b, &b, &basis).unwrap();
        assert_eq!(max_abs(&p.u_a), 0.0);
        assert_eq!(max_abs(&p.v_b), 0.0);
        assert!(max_abs(&(&p.r_a - basis.signal())) == 0.0);
        assert!(max_abs(&(&p.r_b - basis.idler())) == 0.0);
    }

    #[test]
    fn low_rank_matches_dense() {
        let s = reference_state(6.0);
        let g = *s.grid();
        let fa = make_rect_filter(0.0, 4.0, &g).unwrap();
        let fb = make_gauss_filter(0.5, 3.0, &g).unwrap();
        let basis = MeasurementBasis::schmidt(&s, 6).unwrap();
        let dense = filtered_projections(&s, &fa, &fb, &basis).unwrap();
        let fast = Projector::new(&s, &fa, &fb).unwrap().project(&basis).unwrap();
        for (x, y) in [
            (&dense.u_a, &fast.u_a),
            (&dense.u_b, &fast.u_b),
            (&dense.v_a, &fast.v_a),
            (&dense.v_b, &fast.v_b),
            (&dense.r_a, &fast.r_a),
            (&dense.r_b, &fast.r_b),
        ] {
            assert!(max_abs(&(x - y)) < 1e-12);
        }
    }

    #[test]
    fn commutator_preserved() {
        let s = reference_state(6.0);
        let g = *s.grid();
        let d = g.d_omega();
        for fa in [
            make_rect_filter(0.0, 4.0, &g).unwrap(),
            make_gauss_filter(1.0, 2.5, &g).unwrap(),
            Filter::identity(&g),
        ] {
            let basis = MeasurementBasis::schmidt(&s, 8).unwrap();
            let p = filtered_projections(&s, &fa, &fa, &basis).unwrap();
            for k in 0..8 {
                let c = (p.u_a.column(k).norm_squared() - p.v_a.column(k).norm_squared()
                    + p.r_a.column(k).norm_squared())
                    * d;
                assert!((c - 1.0).abs() < 1e-8, "{} mode {k}: {c}", fa.kind());
            }
        }
    }

    #[test]
    fn filtered_norm_never_exceeds_unfiltered() {
        let s = reference_state(6.0);
        let g = *s.grid();
        let d = g.d_omega();
        let r_max = s.r_values().unwrap()[0];
        let basis = MeasurementBasis::schmidt(&s, 8).unwrap();
        let id = Filter::identity(&g);
        let open = filtered_projections(&s, &id, &id, &basis).unwrap();
        let f = make_rect_filter(0.0, 4.0, &g).unwrap();
        let shut = filtered_projections(&s, &f, &f, &basis).unwrap();
        for k in 0..8 {
            let filtered = shut.u_a.column(k).norm_squared() * d;
            let unfiltered = open.u_a.column(k).norm_squared() * d;
            assert!(filtered <= r_max.cosh().powi(2) + 1e-12);
            assert!(filtered <= unfiltered + 1e-12);
        }
    }

    #[test]
    fn projections_reject_grid_mismatch() {
        let s = reference_state(6.0);
        let other = FrequencyGrid::new(100, -20.0, 20.5).unwrap();
        let basis = MeasurementBasis::schmidt(&s, 2).unwrap();
        let f = Filter::identity(&other);
        assert!(matches!(
            filtered_projections(&s, &f, &Filter::identity(s.grid()), &basis),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn basis_must_be_orthonormal() {
        let g = FrequencyGrid::new(4, 0.0, 3.0).unwrap();
        let m = CMatrix::from_element(4, 1, C64::new(1.0, 0.0));
        assert!(matches!(
            MeasurementBasis::shared(&g, m),
            Err(Error::Contract { .. })
        ));
    }
}
