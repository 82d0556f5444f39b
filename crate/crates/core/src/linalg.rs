use nalgebra::{DMatrix, DVector};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `k' M k` for a dense symmetric matrix.
pub(crate) fn quad_form(m: &DMatrix<f64>, k: &[f64]) -> f64 {
    let n = k.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * k[j];
        }
        acc += k[i] * row;
    }
    acc
}

/// Positive definiteness with a relative floor on the smallest eigenvalue,
/// so that matrices that are singular up to rounding are rejected.
pub(crate) fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    max > 0.0 && min > 1e-12 * max
}

pub(crate) fn solve_spd(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let chol = m.clone().cholesky()?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    Some(x.iter().copied().collect())
}
