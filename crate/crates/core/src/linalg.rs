//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Numerical rank from the singular values.
pub(crate) fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let tol = max * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Residual of the least-squares projection of `y` onto the column space of `x`,
/// together with the numerical rank used.
pub(crate) fn ols_residual(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    if x.ncols() == 0 {
        return (y.clone(), 0);
    }
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = max * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    let mut fitted = DVector::zeros(y.len());
    let mut r = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let uk = u.column(k);
            fitted += uk * uk.dot(y);
            r += 1;
        }
    }
    (y - fitted, r)
}

pub(crate) fn cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m)
}

/// log-determinant of a matrix from its Cholesky factor.
pub(crate) fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Lower-triangular matrix `l` with `l * l^T = m` for symmetric PSD `m`.
///
/// Uses an eigen-decomposition so singular (boundary) matrices are fine;
/// eigenvalues within `tol` of zero are clamped.
pub(crate) fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c.l());
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return None;
    }
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let root = &eig.eigenvectors * sqrt_vals;
    // QR of root^T gives root = R^T Q^T, so root root^T = R^T R.
    let qr = root.transpose().qr();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
        }
    }
    let mut l = DMatrix::zeros(n, n);
    let rt = r.transpose();
    l.view_mut((0, 0), (rt.nrows(), rt.ncols())).copy_from(&rt);
    Some(l)
}
