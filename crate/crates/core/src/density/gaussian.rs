use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{FactoredCovariance, LatentModel, ModelKind};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Rows per parallel chunk when scoring a batch.
const ROW_CHUNK: usize = 256;

/// Marginal Gaussian `N(mu, W W^T + Psi)` of a probabilistic latent model.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    cov: FactoredCovariance,
    source: ModelKind,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: FactoredCovariance, source: ModelKind) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        Ok(Self { mean, cov, source })
    }

    /// PCA carries no noise model and therefore no density.
    pub fn from_model(model: &LatentModel) -> Result<Self> {
        let cov = model
            .covariance()
            .ok_or_else(|| Error::Domain("PCA defines no marginal density; use PPCA or FA".into()))?;
        Self::new(model.mean().clone(), cov.clone(), model.kind())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn source(&self) -> ModelKind {
        self.source
    }

    pub fn covariance(&self) -> &FactoredCovariance {
        &self.cov
    }

    pub fn log_det(&self) -> f64 {
        self.cov.log_det()
    }

    /// Same covariance, mean moved by `t`.
    pub fn shifted(&self, t: &DVector<f64>) -> Self {
        Self {
            mean: &self.mean + t,
            cov: self.cov.clone(),
            source: self.source,
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// `(x - mu)^T C^-1 (x - mu)`.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x.len())?;
        Ok(self.cov.quad_form(&(x - &self.mean)))
    }

    /// Squared distances of every row of `x` (N x D), in row order.
    pub fn mahalanobis_sq_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check(x.ncols())?;
        let n = x.nrows();
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(ROW_CHUNK)
            .map(|s| (s, ROW_CHUNK.min(n - s)))
            .collect();
        let parts: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&(start, len)| {
                let mut r = x.rows(start, len).into_owned();
                for mut row in r.row_iter_mut() {
                    row -= self.mean.transpose();
                }
                self.cov.quad_form_rows(&r)
            })
            .collect();
        Ok(parts.concat())
    }

    /// `-1/2 [D log 2 pi + log|C| + d^2]`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let d2 = self.mahalanobis_sq(x)?;
        Ok(self.log_density_from_distance(d2))
    }

    pub fn log_density_from_distance(&self, d2: f64) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det() + d2)
    }

    /// Distance of the reconstruction `decode(encode(x))` of each row.
    pub fn reconstruction_distances(&self, model: &LatentModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check(x.ncols())?;
        let recon = model.decode_rows(&model.encode_rows(x));
        self.mahalanobis_sq_rows(&recon)
    }
}
