use nalgebra::{DMatrix, DVector};

use super::spectrum::{CenteredData, Spectrum};
use crate::error::{Error, Result};

/// Deterministic PCA: orthonormal components and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// D x K, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Descending, nonnegative.
    pub eigenvalues: DVector<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let data = CenteredData::new(x)?;
        let spectrum = Spectrum::of(&data);
        Self::from_spectrum(&data, &spectrum, k)
    }

    pub fn from_spectrum(data: &CenteredData, spectrum: &Spectrum, k: usize) -> Result<Self> {
        if k == 0 || k > spectrum.effective_rank {
            return Err(Error::RankDeficient {
                requested: k,
                effective_rank: spectrum.effective_rank,
            });
        }
        Ok(Self {
            mean: data.mean.clone(),
            components: spectrum.vectors.columns(0, k).into_owned(),
            eigenvalues: DVector::from_column_slice(&spectrum.eigenvalues[..k]),
            total_variance: spectrum.total_variance,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.components.ncols()
    }

    /// `z = U^T (x - mean)`.
    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        self.components.tr_mul(&(x - &self.mean))
    }

    /// `x = U z + mean`.
    pub fn decode(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.components * z + &self.mean
    }

    pub fn explained_variance_fraction(&self, k: usize) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        let k = k.min(self.latent_dim());
        (self.eigenvalues.rows(0, k).sum() / self.total_variance).min(1.0)
    }
}
