//! SVD-based kernels, computed with faer on nalgebra storage.

use nalgebra::DMatrix;

fn to_faer(m: &DMatrix<f64>) -> Option<faer::Mat<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]))
}

/// Singular values in non-increasing order. `None` for non-finite input or
/// if the decomposition fails to converge.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    to_faer(m)?.singular_values().ok()
}

/// Moore-Penrose pseudoinverse `V S+ U'`, treating singular values at or
/// below `rel_cutoff * s_max` as zero.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> Option<DMatrix<f64>> {
    let svd = to_faer(m)?.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let max = (0..k).map(|i| s[i]).fold(0.0f64, f64::max);
    let inv: Vec<f64> = (0..k).map(|i| if s[i] > rel_cutoff * max { 1.0 / s[i] } else { 0.0 }).collect();
    Some(DMatrix::from_fn(m.ncols(), m.nrows(), |i, j| (0..k).map(|l| v[(i, l)] * inv[l] * u[(j, l)]).sum()))
}
