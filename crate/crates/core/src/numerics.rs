//! Dense Hermitian linear algebra and root finding used by every other module.
//!
//! The eigendecomposition contract here is deliberately strict: eigenvalues are
//! sorted descending with a stable tie-break on the pre-sort index, and each
//! eigenvector is rotated so that its first entry of non-negligible magnitude
//! is real and non-negative. Filter design iterates on eigenvector bases, so
//! this phase/ordering convention is what makes whole simulation runs
//! bit-reproducible.

use crate::{C64, CMat, Error, RVec, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative tolerance for eigendecomposition reconstruction checks.
pub const EIG_RECONSTRUCTION_TOL: f64 = 1e-10;
/// Tolerance on `W† W = I` for orthonormal filter banks.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Default residual tolerance for [`bisect_monotone`] (bits per channel use).
pub const BISECT_DEFAULT_TOL: f64 = 1e-9;
/// Entries with magnitude at or below this are skipped by the phase convention.
pub const PHASE_MAG_FLOOR: f64 = 1e-12;

const BISECT_MAX_ITER: usize = 200;

/// Eigendecomposition of a Hermitian matrix.
///
/// `values[i]` pairs with column `i` of `vectors`; values are non-increasing
/// and `vectors` is unitary under the crate phase convention.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: RVec,
    pub vectors: CMat,
}

/// Hermitian part `(A + A†)/2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

fn check_finite(a: &CMat) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix contains non-finite entries".into()))
    }
}

/// Rotate each column so its first entry with magnitude above
/// [`PHASE_MAG_FLOOR`] is real and non-negative.
fn fix_column_phases(m: &mut CMat) {
    for j in 0..m.ncols() {
        let mut col = m.column_mut(j);
        if let Some(z) = col.iter().find(|z| z.norm() > PHASE_MAG_FLOOR) {
            let phase = z.conj() / z.norm();
            for e in col.iter_mut() {
                *e *= phase;
            }
        }
    }
}

/// Eigendecomposition of a Hermitian matrix, symmetrized defensively.
///
/// Eigenvalues come back sorted descending; ties keep the solver's original
/// column order (stable), and eigenvector phases follow the crate convention.
pub fn hermitian_eig(a: &CMat) -> Result<HermitianEig> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a)?;
    let se = nalgebra::SymmetricEigen::new(hermitian_part(a));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });

    let values = RVec::from_fn(n, |i, _| se.eigenvalues[order[i]]);
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    fix_column_phases(&mut vectors);
    Ok(HermitianEig { values, vectors })
}

/// The `n_sub` principal eigenvectors of a Hermitian matrix, as columns.
pub fn principal_subspace(a: &CMat, n_sub: usize) -> Result<CMat> {
    let n = a.nrows();
    if n_sub == 0 || n_sub > n {
        return Err(Error::InvalidInput(format!(
            "subspace dimension {n_sub} out of range 1..={n}"
        )));
    }
    let eig = hermitian_eig(a)?;
    Ok(eig.vectors.columns(0, n_sub).into_owned())
}

/// Bisection for a monotone *decreasing* scalar function.
///
/// Returns `x` with `|f(x) − target| ≤ tol`. The caller supplies a valid
/// bracket with `f(lo) ≥ target ≥ f(hi)`.
pub fn bisect_monotone(
    f: impl Fn(f64) -> f64,
    target: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    if !(lo < hi) {
        return Err(Error::Bracket(format!("lo ({lo}) must be below hi ({hi})")));
    }
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo >= target && target >= fhi) {
        return Err(Error::Bracket(format!(
            "f(lo)={flo}, f(hi)={fhi} do not bracket target {target}"
        )));
    }
    if (flo - target).abs() <= tol {
        return Ok(lo);
    }
    if (fhi - target).abs() <= tol {
        return Ok(hi);
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..BISECT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm - target).abs() <= tol {
            return Ok(mid);
        }
        if fm > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence(format!(
        "bisection did not reach residual {tol} within {BISECT_MAX_ITER} iterations"
    )))
}

/// Orthonormal basis of the column space via modified Gram-Schmidt, with the
/// crate phase convention. Fails if the columns are numerically dependent.
pub fn orthonormalize(m: &CMat) -> Result<CMat> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if cols == 0 || cols > rows {
        return Err(Error::InvalidInput(format!(
            "cannot orthonormalize {rows}x{cols} (need 1 ≤ cols ≤ rows)"
        )));
    }
    let mut q = CMat::zeros(rows, cols);
    for j in 0..cols {
        let mut v = m.column(j).into_owned();
        // two MGS passes for numerical orthogonality
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dotc(&v);
                v -= q.column(i).into_owned() * proj;
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * m.column(j).norm().max(1.0) {
            return Err(Error::RankDeficient(format!(
                "column {j} is numerically dependent on earlier columns"
            )));
        }
        q.set_column(j, &v.unscale(norm));
    }
    fix_column_phases(&mut q);
    Ok(q)
}

/// Orthonormal completion: columns spanning the orthogonal complement of the
/// column space of `w` (assumed to have orthonormal columns).
pub fn orthonormal_complement(w: &CMat) -> Result<CMat> {
    let (rows, cols) = w.shape();
    if cols > rows {
        return Err(Error::InvalidInput(format!(
            "cannot complement {rows}x{cols} with cols > rows"
        )));
    }
    let want = rows - cols;
    let mut out = CMat::zeros(rows, want);
    let mut found = 0;
    for a in 0..rows {
        if found == want {
            break;
        }
        let mut v = CMat::zeros(rows, 1);
        v[(a, 0)] = C64::new(1.0, 0.0);
        let mut v = v.column(0).into_owned();
        for _ in 0..2 {
            for i in 0..cols {
                let proj = w.column(i).dotc(&v);
                v -= w.column(i).into_owned() * proj;
            }
            for i in 0..found {
                let proj = out.column(i).dotc(&v);
                v -= out.column(i).into_owned() * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.set_column(found, &v.unscale(norm));
            found += 1;
        }
    }
    if found != want {
        return Err(Error::RankDeficient(
            "failed to complete orthonormal basis".into(),
        ));
    }
    fix_column_phases(&mut out);
    Ok(out)
}

/// `log2 det(I + A)` for Hermitian PSD `A`, via Cholesky of `I + A`.
pub fn log2_det_eye_plus(a: &CMat) -> Result<f64> {
    let n = a.nrows();
    let m = CMat::identity(n, n) + hermitian_part(a);
    let chol = nalgebra::Cholesky::new(m).ok_or_else(|| {
        Error::RankDeficient("Cholesky of I + A failed; A not PSD within tolerance".into())
    })?;
    let l = chol.l();
    Ok(2.0 * (0..n).map(|i| l[(i, i)].re.log2()).sum::<f64>())
}

/// `log2 det(A)` for Hermitian PSD `A`; `None` when effectively singular.
pub fn log2_det_psd(a: &CMat) -> Result<Option<f64>> {
    let eig = hermitian_eig(a)?;
    let max = eig.values.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 || eig.values.iter().any(|&v| v <= 1e-12 * max) {
        return Ok(None);
    }
    Ok(Some(eig.values.iter().map(|v| v.log2()).sum()))
}

/// Matrix of i.i.d. standard circularly-symmetric complex Gaussians CN(0, 1).
///
/// Entries are generated column-major so the draw order is independent of the
/// matrix backend.
pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(i, j)] = C64::new(re * s, im * s);
        }
    }
    m
}
