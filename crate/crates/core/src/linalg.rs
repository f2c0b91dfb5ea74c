use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive definite `a`, falling back to LU
/// when the Cholesky factorization fails. `None` means the system is
/// numerically singular.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    // Rounding can let Cholesky through on a singular matrix with tiny pivots.
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if let Some(ch) = a.clone().cholesky() {
        let pivots_ok = ch.l_dirty().diagonal().iter().all(|d| d * d > 1e-10 * scale);
        let x = ch.solve(b);
        if pivots_ok && x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    if is_singular(a) {
        return None;
    }
    a.clone().lu().solve(b).filter(|x| x.iter().all(|v| v.is_finite()))
}

pub(crate) fn solve_spd_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if is_singular(a) {
        return None;
    }
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Relative eigenvalue test for a symmetric matrix.
pub(crate) fn is_singular(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return false;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    !(max > 0.0) || min <= 1e-12 * max
}

/// `ln det` of a symmetric positive definite matrix.
pub(crate) fn ln_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    if a.nrows() == 0 {
        return Some(0.0);
    }
    let ch = a.clone().cholesky()?;
    let l = ch.l();
    Some(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Column means and the `1/T` covariance of a `T x J` matrix.
pub(crate) fn mean_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let t = x.nrows() as f64;
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / t));
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / t;
    (mean, cov)
}
