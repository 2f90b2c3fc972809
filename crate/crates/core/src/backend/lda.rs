use nalgebra::{DMatrix, DVector};

use crate::data::SpeakerDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Linear discriminant projection `y = Pᵀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    /// `m × d`, columns ordered by decreasing discriminant eigenvalue.
    pub projection: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl Lda {
    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.len()));
        }
        Ok(self.projection.tr_mul(x))
    }
}

/// Between- and within-speaker scatter, both normalized by the vector count.
pub fn scatter(ds: &SpeakerDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = ds.dim();
    let total = ds.n_vectors() as f64;
    let (global, _, _) = linalg::mean_cov(ds.vectors().map(|v| v.as_slice()), m);
    let mut between = DMatrix::zeros(m, m);
    let mut within = DMatrix::zeros(m, m);
    for (_, vectors) in ds.speakers() {
        let (mean, _, n) = linalg::mean_cov(vectors.iter().map(|v| v.as_slice()), m);
        let d = &mean - &global;
        between.ger(n as f64 / total, &d, &d, 1.0);
        for v in vectors {
            let e = DVector::from_column_slice(v) - &mean;
            within.ger(1.0 / total, &e, &e, 1.0);
        }
    }
    (between, within)
}

/// Top-`d` generalized eigenvectors of `(S_b, S_w + εI)`, `ε = rel_floor ·
/// λ_max(S_w)`. Each column is scaled to unit within-class variance and its
/// largest-magnitude entry is positive.
pub fn fit_lda(ds: &SpeakerDataset, d: usize, rel_floor: f64) -> Result<Lda> {
    let m = ds.dim();
    let limit = m.min(ds.n_speakers().saturating_sub(1));
    if d == 0 || d > limit {
        return Err(Error::Config(format!(
            "LDA dimension {d} must lie in 1..={limit} (min of m = {m} and speakers - 1)"
        )));
    }
    let (between, within) = scatter(ds);
    let top = linalg::sym_eigen_desc(&within).0.max();
    let eps = rel_floor * top.max(0.0);
    let regularized = within + DMatrix::identity(m, m) * eps;
    let chol = linalg::cholesky(&regularized, "within-speaker scatter")?;
    let l = chol.l();
    // C = L⁻¹ S_b L⁻ᵀ
    let linv_b = l.solve_lower_triangular(&between).ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_b.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let (values, vectors) = linalg::sym_eigen_desc(&c);
    let lt = l.transpose();
    let mut projection = DMatrix::zeros(m, d);
    for k in 0..d {
        let mut w = lt
            .solve_upper_triangular(&vectors.column(k).into_owned())
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let pivot = w.iamax();
        if w[pivot] < 0.0 {
            w.neg_mut();
        }
        projection.set_column(k, &w);
    }
    Ok(Lda {
        projection,
        eigenvalues: values.rows(0, d).into_owned(),
    })
}
