//! Dense linear algebra shared by the decomposition-based modules.
//!
//! Grid functions are stored as the columns of `n_points × n_modes` complex
//! matrices. Integrals over frequency use the rectangle rule with the grid
//! spacing as the weight.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance under which two magnitudes count as a tie when picking
/// the phase reference entry of a mode.
const PHASE_TIE_RTOL: f64 = 1e-9;

/// Singular value decomposition with the singular triplets sorted by
/// descending singular value. Equal values keep the order produced by the
/// underlying routine.
pub struct SortedSvd {
    pub u: CMatrix,
    pub singular_values: Vec<f64>,
    /// Right singular vectors as columns, so that `m = u · diag(s) · v^H`.
    pub v: CMatrix,
}

pub fn sorted_svd(m: &CMatrix, module: &'static str) -> Result<SortedSvd> {
    let describe = || {
        format!(
            "{}x{} matrix (frobenius norm {:.6e}, max |entry| {:.6e})",
            m.nrows(),
            m.ncols(),
            m.norm(),
            m.iter().map(|z| z.norm()).fold(0.0, f64::max),
        )
    };
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical(module, format!("non-finite entries in {}", describe())));
    }
    let fm = faer::Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::numerical(module, format!("SVD did not converge ({e:?}) for a {}", describe())))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = m.nrows().min(m.ncols());
    let s: Vec<f64> = (0..k).map(|i| fs[i].re).collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let mut u_sorted = CMatrix::zeros(m.nrows(), k);
    let mut v_sorted = CMatrix::zeros(m.ncols(), k);
    let mut values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..m.nrows() {
            u_sorted[(i, dst)] = fu[(i, src)];
        }
        for i in 0..m.ncols() {
            v_sorted[(i, dst)] = fv[(i, src)];
        }
        values.push(s[src]);
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical(
            module,
            format!("SVD produced non-finite singular values for a {}", describe()),
        ));
    }
    Ok(SortedSvd {
        u: u_sorted,
        singular_values: values,
        v: v_sorted,
    })
}

/// Index of the entry with the largest magnitude; near-ties go to the lowest
/// index so that mirror-symmetric modes pick a reproducible reference.
pub fn phase_reference_index<'a>(entries: impl Iterator<Item = &'a C64>) -> usize {
    let mags: Vec<f64> = entries.map(|z| z.norm()).collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    mags.iter()
        .position(|&m| m >= max * (1.0 - PHASE_TIE_RTOL))
        .unwrap_or(0)
}

/// Rotates column `k` of `signal` so that its largest entry is real and
/// positive, and multiplies column `k` of `idler` by the compensating phase
/// so that the products `ψ_k^* φ_k^*` are unchanged.
pub fn fix_phase(signal: &mut CMatrix, idler: &mut CMatrix, k: usize) {
    let idx = phase_reference_index(signal.column(k).iter());
    let z = signal[(idx, k)];
    if z.norm() == 0.0 {
        return;
    }
    let rot = z.conj() / z.norm();
    signal.column_mut(k).scale_mut_complex(rot);
    // ψ → e^{-iα} ψ  requires  φ → e^{+iα} φ
    idler.column_mut(k).scale_mut_complex(rot.conj());
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, s: C64);
}

impl<S> ScaleComplex for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_complex(&mut self, s: C64) {
        for z in self.iter_mut() {
            *z *= s;
        }
    }
}

/// `∫ x(ω) y(ω) dω` without conjugation.
pub fn integrate_product<'a>(
    x: impl IntoIterator<Item = &'a C64>,
    y: impl IntoIterator<Item = &'a C64>,
    d_omega: f64,
) -> C64 {
    x.into_iter()
        .zip(y)
        .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
        * d_omega
}

/// Largest deviation of `∫ m_k m_j^* dω` from `δ_kj` over all column pairs.
pub fn orthonormality_error(modes: &CMatrix, d_omega: f64) -> f64 {
    let gram = modes.transpose() * modes.conjugate() * C64::new(d_omega, 0.0);
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).norm());
        }
    }
    worst
}
