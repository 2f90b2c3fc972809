use nalgebra::{DMatrix, DVector};

use crate::data::SpeakerDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Centering and whitening fitted on development data.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub center: DVector<f64>,
    pub whitener: DMatrix<f64>,
}

/// Global mean and `Σ^{-1/2}` of the development vectors, with covariance
/// eigenvalues floored at `rel_floor · λ_max`.
pub fn fit_preprocess(dev: &SpeakerDataset, rel_floor: f64) -> Result<Preprocessor> {
    if dev.n_vectors() < 2 {
        return Err(Error::InsufficientData("whitening needs at least 2 vectors".into()));
    }
    let (center, cov, _) = linalg::mean_cov(dev.vectors().map(|v| v.as_slice()), dev.dim());
    let whitener = linalg::inv_sqrt(&cov, rel_floor, "development covariance")?;
    Ok(Preprocessor { center, whitener })
}

impl Preprocessor {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `W (v - c)` without normalization.
    pub fn whiten(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dim(self.dim(), v.len()));
        }
        Ok(&self.whitener * (DVector::from_column_slice(v) - &self.center))
    }

    /// Centered, whitened and scaled to unit Euclidean norm.
    pub fn apply(&self, v: &[f64]) -> Result<DVector<f64>> {
        let w = self.whiten(v)?;
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(
                "vector is zero after centering and whitening; cannot length-normalize".into(),
            ));
        }
        Ok(w / norm)
    }
}
