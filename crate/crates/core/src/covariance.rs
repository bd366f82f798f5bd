//! Covariance matrix of the filtered multimode state.
//!
//! Quadratures are ordered `(X_a^1, Y_a^1, X_b^1, Y_b^1, …, X_a^N, …, Y_b^N)`
//! and the vacuum has covariance `I / 2`. Block `(k, l)` has the structure
//!
//! ```text
//!        ⎛  a   c   e   g ⎞
//!  1/2 · ⎜ -c   a   g  -e ⎟
//!        ⎜  f   h   b   d ⎟
//!        ⎝  h  -f  -d   b ⎠
//! ```
//!
//! with `a … h` overlap integrals of the filtered projections.

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};

use crate::error::{Error, Result};
use crate::filtering::ProjectionSet;
use crate::linalg::{CMatrix, C64};

const MODULE: &str = "covariance";

/// Tolerance on the smallest symplectic eigenvalue below which an assembled
/// matrix is rejected.
pub const ASSEMBLY_PHYSICALITY_TOL: f64 = 1e-6;

/// Asymmetry above this is reported in the diagnostics.
pub const ASYMMETRY_WARN: f64 = 1e-8;

/// Tolerance on symmetry for externally supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Round-off bookkeeping collected during assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssemblyDiagnostics {
    /// Largest `|σ_ij - σ_ji|` before symmetrization.
    pub max_asymmetry: f64,
    /// Largest imaginary part discarded from the element integrals.
    pub max_imag_residual: f64,
    pub min_symplectic: f64,
}

impl AssemblyDiagnostics {
    pub fn asymmetry_flagged(&self) -> bool {
        self.max_asymmetry > ASYMMETRY_WARN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    sigma: DMatrix<f64>,
    n_modes: usize,
    diagnostics: AssemblyDiagnostics,
}

impl CovarianceMatrix {
    /// Wraps an existing `4N × 4N` matrix; it must be symmetric to
    /// [`SYMMETRY_TOL`]. Physicality is not checked here.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || n != sigma.ncols() || n % 4 != 0 {
            return Err(Error::contract(
                MODULE,
                format!(
                    "covariance must be square with a multiple of 4 rows, got {}x{}",
                    sigma.nrows(),
                    sigma.ncols()
                ),
            ));
        }
        let asym = max_asymmetry(&sigma);
        if asym > SYMMETRY_TOL {
            return Err(Error::contract(
                MODULE,
                format!("covariance not symmetric (max |σ_ij - σ_ji| = {asym:.3e})"),
            ));
        }
        Ok(CovarianceMatrix {
            n_modes: n / 4,
            diagnostics: AssemblyDiagnostics {
                max_asymmetry: asym,
                max_imag_residual: 0.0,
                min_symplectic: f64::NAN,
            },
            sigma,
        })
    }

    pub fn vacuum(n_modes: usize) -> Self {
        let dim = 4 * n_modes;
        CovarianceMatrix {
            sigma: DMatrix::identity(dim, dim) * 0.5,
            n_modes,
            diagnostics: AssemblyDiagnostics {
                min_symplectic: 0.5,
                ..Default::default()
            },
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn diagnostics(&self) -> &AssemblyDiagnostics {
        &self.diagnostics
    }

    /// The `4 × 4` block correlating optical modes `k` and `l` (zero-based).
    pub fn mode_block(&self, k: usize, l: usize) -> Result<Matrix4<f64>> {
        if k >= self.n_modes || l >= self.n_modes {
            return Err(Error::config(
                MODULE,
                format!("mode block ({k}, {l}) out of range for {} modes", self.n_modes),
            ));
        }
        Ok(self.sigma.fixed_view::<4, 4>(4 * k, 4 * l).into_owned())
    }

    /// Leading `4m × 4m` sub-matrix (the first `m` optical modes).
    pub fn truncated(&self, m: usize) -> Result<CovarianceMatrix> {
        if m == 0 || m > self.n_modes {
            return Err(Error::config(
                MODULE,
                format!("cannot keep {m} of {} modes", self.n_modes),
            ));
        }
        Ok(CovarianceMatrix {
            sigma: self.sigma.view((0, 0), (4 * m, 4 * m)).into_owned(),
            n_modes: m,
            diagnostics: AssemblyDiagnostics {
                min_symplectic: f64::NAN,
                ..self.diagnostics
            },
        })
    }

    /// Frobenius norm of block `(k, l)`.
    pub fn block_norm(&self, k: usize, l: usize) -> Result<f64> {
        Ok(self.mode_block(k, l)?.norm())
    }

    /// Row-major CSV with 17 significant digits per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.sigma.len() * 25);
        for i in 0..self.sigma.nrows() {
            let row: Vec<String> = (0..self.sigma.ncols())
                .map(|j| format!("{:.16e}", self.sigma[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|e| {
                            Error::config(MODULE, format!("bad covariance entry {x:?}: {e}"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::config(MODULE, "covariance CSV is not square"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Covariance of a single two-mode squeezed vacuum with parameter `r`.
pub fn analytic_epr_block(r: f64) -> Matrix4<f64> {
    let c = (2.0 * r).cosh() / 2.0;
    let s = (2.0 * r).sinh() / 2.0;
    Matrix4::new(
        c, 0.0, s, 0.0, //
        0.0, c, 0.0, -s, //
        s, 0.0, c, 0.0, //
        0.0, -s, 0.0, c,
    )
}

/// Two-mode squeezed vacuum after both arms pass a beam splitter of
/// transmissivity `eta`.
pub fn lossy_epr_block(r: f64, eta: f64) -> Matrix4<f64> {
    let vac = Matrix4::identity() * 0.5;
    analytic_epr_block(r) * eta + vac * (1.0 - eta)
}

/// `∫ x_k(ω) y_l(ω) dω` for all column pairs.
fn overlaps(x: &CMatrix, y: &CMatrix, d: C64) -> CMatrix {
    x.transpose() * y * d
}

/// Covariance of the first `n_modes` measured modes, assembled from the
/// element integrals by grid quadrature.
pub fn assemble_covariance(projections: &ProjectionSet, n_modes: usize) -> Result<CovarianceMatrix> {
    if n_modes == 0 || n_modes > projections.n_modes() {
        return Err(Error::config(
            MODULE,
            format!(
                "requested {n_modes} modes from a projection set with {}",
                projections.n_modes()
            ),
        ));
    }
    let cols = |m: &CMatrix| m.columns(0, n_modes).into_owned();
    let (ua, ub, va, vb, ra, rb) = (
        cols(&projections.u_a),
        cols(&projections.u_b),
        cols(&projections.v_a),
        cols(&projections.v_b),
        cols(&projections.r_a),
        cols(&projections.r_b),
    );
    let d = C64::new(projections.grid.d_omega(), 0.0);

    // [k, l] = ∫ U^k U^{l*},  ∫ R^k R^{l*},  ∫ V^{k*} V^l
    let uu_a = overlaps(&ua, &ua.conjugate(), d);
    let rr_a = overlaps(&ra, &ra.conjugate(), d);
    let vv_a = overlaps(&va.conjugate(), &va, d);
    let uu_b = overlaps(&ub, &ub.conjugate(), d);
    let rr_b = overlaps(&rb, &rb.conjugate(), d);
    let vv_b = overlaps(&vb.conjugate(), &vb, d);
    // [k, l] = ∫ U_a^k V_b^l,  ∫ V_a^k U_b^l,  ∫ U_b^k V_a^l,  ∫ V_b^k U_a^l
    let uavb = overlaps(&ua, &vb, d);
    let vaub = overlaps(&va, &ub, d);
    let ubva = overlaps(&ub, &va, d);
    let vbua = overlaps(&vb, &ua, d);

    let half = C64::new(0.5, 0.0);
    let half_i = C64::new(0.0, -0.5); // 1 / (2i)

    let dim = 4 * n_modes;
    let mut sigma = DMatrix::<f64>::zeros(dim, dim);
    let mut imag = 0.0_f64;
    for k in 0..n_modes {
        for l in 0..n_modes {
            let a = half
                * (uu_a[(k, l)] + rr_a[(k, l)] + vv_a[(k, l)] + uu_a[(l, k)] + rr_a[(l, k)] + vv_a[(l, k)]);
            let b = half
                * (uu_b[(k, l)] + rr_b[(k, l)] + vv_b[(k, l)] + uu_b[(l, k)] + rr_b[(l, k)] + vv_b[(l, k)]);
            let c = half_i
                * (-uu_a[(k, l)] - rr_a[(k, l)] + vv_a[(k, l)] + uu_a[(l, k)] + rr_a[(l, k)] - vv_a[(l, k)]);
            let dd = half_i
                * (-uu_b[(k, l)] - rr_b[(k, l)] + vv_b[(k, l)] + uu_b[(l, k)] + rr_b[(l, k)] - vv_b[(l, k)]);
            let e = half
                * (uavb[(k, l)] + vaub[(k, l)].conj() + vaub[(k, l)] + uavb[(k, l)].conj());
            let f = half
                * (ubva[(k, l)] + vbua[(k, l)].conj() + vbua[(k, l)] + ubva[(k, l)].conj());
            let g = half_i
                * (uavb[(k, l)] - vaub[(k, l)].conj() + vaub[(k, l)] - uavb[(k, l)].conj());
            let h = half_i
                * (ubva[(k, l)] - vbua[(k, l)].conj() + vbua[(k, l)] - ubva[(k, l)].conj());

            for z in [a, b, c, dd, e, f, g, h] {
                imag = imag.max(z.im.abs());
            }
            let (a, b, c, dd, e, f, g, h) = (a.re, b.re, c.re, dd.re, e.re, f.re, g.re, h.re);
            let block = Matrix4::new(
                a, c, e, g, //
                -c, a, g, -e, //
                f, h, b, dd, //
                h, -f, -dd, b,
            ) * 0.5;
            sigma.fixed_view_mut::<4, 4>(4 * k, 4 * l).copy_from(&block);
        }
    }

    let asym = max_asymmetry(&sigma);
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let nu_min = match symplectic_eigenvalues(&sigma) {
        Ok(nu) => *nu.last().expect("non-empty spectrum"),
        Err(Error::Numerical { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    if nu_min < 0.5 - ASSEMBLY_PHYSICALITY_TOL {
        return Err(Error::Physicality {
            module: MODULE,
            min_symplectic: nu_min,
        });
    }
    Ok(CovarianceMatrix {
        sigma,
        n_modes,
        diagnostics: AssemblyDiagnostics {
            max_asymmetry: asym,
            max_imag_residual: imag,
            min_symplectic: nu_min,
        },
    })
}

/// `Ω = ⊕ [[0, 1], [-1, 0]]` in the `(X, Y)` pair ordering.
pub fn symplectic_form(dim: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(dim, dim);
    for p in 0..dim / 2 {
        omega[(2 * p, 2 * p + 1)] = 1.0;
        omega[(2 * p + 1, 2 * p)] = -1.0;
    }
    omega
}

/// Symplectic eigenvalues of a symmetric positive-definite matrix, one per
/// bosonic mode, descending.
///
/// With `S = σ^{1/2}`, the matrix `S Ω S` is antisymmetric and its
/// eigenvalues are `±iν_j`, so the eigenvalues of `(SΩS)^T (SΩS)` are the
/// `ν_j²`, each doubly degenerate.
pub fn symplectic_eigenvalues(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    if n == 0 || n != sigma.ncols() || n % 2 != 0 {
        return Err(Error::contract(
            MODULE,
            format!("need an even square matrix, got {}x{}", sigma.nrows(), sigma.ncols()),
        ));
    }
    let asym = max_asymmetry(sigma);
    let scale = sigma.amax().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::contract(
            MODULE,
            format!("symplectic spectrum needs a symmetric matrix (asymmetry {asym:.3e})"),
        ));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::numerical(
            MODULE,
            format!("matrix is not positive definite (smallest eigenvalue {min_eig:.6e})"),
        ));
    }
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let m = &s * symplectic_form(n) * &s;
    let mtm = m.transpose() * &m;
    let mut nu2: Vec<f64> = SymmetricEigen::new((&mtm + mtm.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nu2.sort_by(|a, b| b.total_cmp(a));
    Ok(nu2
        .chunks(2)
        .map(|p| ((p[0].max(0.0)).sqrt() + (p[1].max(0.0)).sqrt()) / 2.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalityCheck {
    pub passed: bool,
    /// Smallest symplectic eigenvalue; zero when the matrix is not positive
    /// definite.
    pub min_symplectic: f64,
}

/// Passes iff every symplectic eigenvalue is at least `1/2 - tol`.
pub fn check_physicality(sigma: &DMatrix<f64>, tol: f64) -> Result<PhysicalityCheck> {
    let min_symplectic = match symplectic_eigenvalues(sigma) {
        Ok(nu) => *nu.last().expect("non-empty spectrum"),
        Err(Error::Numerical { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(PhysicalityCheck {
        passed: min_symplectic >= 0.5 - tol,
        min_symplectic,
    })
}
