//! Dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition with eigenvalues sorted in decreasing order and
/// eigenvector columns permuted to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factor of a symmetric positive-definite matrix, with an error
/// naming the smallest eigenvalue on failure.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| {
        Error::Numerical(format!(
            "{what} is not positive definite (smallest eigenvalue {:e})",
            smallest_eigenvalue(m)
        ))
    })
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `Σ^{-1/2}` (symmetric root) with eigenvalues floored at
/// `rel_floor * λ_max`. A zero floor on a singular matrix is an error.
pub fn inv_sqrt(m: &DMatrix<f64>, rel_floor: f64, what: &str) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_desc(m);
    let top = values.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::Numerical(format!("{what} has no positive eigenvalue")));
    }
    let floor = rel_floor * top;
    let mut scaled = vectors.clone();
    for (i, &v) in values.iter().enumerate() {
        let v = v.max(floor);
        if !(v > 0.0) {
            return Err(Error::Numerical(format!(
                "{what} is rank deficient (eigenvalue {:e}); use a positive eigenvalue floor",
                values[i]
            )));
        }
        let s = 1.0 / v.sqrt();
        scaled.column_mut(i).scale_mut(s);
    }
    Ok(symmetrize(&(scaled * vectors.transpose())))
}

/// Mean and unbiased covariance of `rows`.
pub fn mean_cov<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> (DVector<f64>, DMatrix<f64>, usize) {
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let n = rows.len();
    let mut mean = DVector::zeros(dim);
    for r in &rows {
        mean += DVector::from_column_slice(r);
    }
    if n == 0 {
        return (mean, DMatrix::zeros(dim, dim), 0);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov, n)
}

pub fn rows_to_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> DMatrix<f64> {
    let data: Vec<&[f64]> = rows.collect();
    DMatrix::from_fn(data.len(), dim, |i, j| data[i][j])
}
