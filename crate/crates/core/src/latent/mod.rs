//! Linear latent-variable models: PCA, probabilistic PCA and factor analysis.

pub mod covariance;
pub mod fa;
pub mod pca;
pub mod ppca;
pub mod spectrum;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use covariance::{FactoredCovariance, NoiseKind};
pub use fa::FaModel;
pub use pca::PcaModel;
pub use ppca::PpcaModel;
pub use spectrum::{CenteredData, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pca,
    Ppca,
    Fa,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Pca => 0,
            ModelKind::Ppca => 1,
            ModelKind::Fa => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Pca),
            1 => Some(ModelKind::Ppca),
            2 => Some(ModelKind::Fa),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pca => "pca",
            ModelKind::Ppca => "ppca",
            ModelKind::Fa => "fa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    /// Seed for random initialisation where one is used.
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood before the first iteration and after each one.
    pub trace: Vec<f64>,
    /// Coordinates whose uniqueness sits at the floor (Heywood cases).
    pub floored: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub enum LatentModel {
    Pca(PcaModel),
    Ppca(PpcaModel),
    Fa(FaModel),
}

impl From<PcaModel> for LatentModel {
    fn from(m: PcaModel) -> Self {
        LatentModel::Pca(m)
    }
}

impl From<PpcaModel> for LatentModel {
    fn from(m: PpcaModel) -> Self {
        LatentModel::Ppca(m)
    }
}

impl From<FaModel> for LatentModel {
    fn from(m: FaModel) -> Self {
        LatentModel::Fa(m)
    }
}

impl LatentModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LatentModel::Pca(_) => ModelKind::Pca,
            LatentModel::Ppca(_) => ModelKind::Ppca,
            LatentModel::Fa(_) => ModelKind::Fa,
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            LatentModel::Pca(m) => &m.mean,
            LatentModel::Ppca(m) => &m.mean,
            LatentModel::Fa(m) => &m.mean,
        }
    }

    /// D x K loading (or component) matrix.
    pub fn loadings(&self) -> &DMatrix<f64> {
        match self {
            LatentModel::Pca(m) => &m.components,
            LatentModel::Ppca(m) => &m.loadings,
            LatentModel::Fa(m) => &m.loadings,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings().ncols()
    }

    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LatentModel::Pca(m) => m.encode(x),
            LatentModel::Ppca(m) => m.encode(x),
            LatentModel::Fa(m) => m.encode(x),
        }
    }

    /// Encode every row of `x` (N x D) into an N x K matrix.
    pub fn encode_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = x.clone();
        for (c, m) in self.mean().iter().enumerate() {
            r.column_mut(c).add_scalar_mut(-m);
        }
        match self {
            LatentModel::Pca(m) => r * &m.components,
            LatentModel::Ppca(m) => m.covariance().posterior_mean_rows(&r),
            LatentModel::Fa(m) => m.covariance().posterior_mean_rows(&r),
        }
    }

    pub fn decode(&self, z: &DVector<f64>) -> DVector<f64> {
        self.loadings() * z + self.mean()
    }

    /// Decode every row of `z` (N x K) into N x D.
    pub fn decode_rows(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.loadings().transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean().transpose();
        }
        x
    }

    pub fn explained_variance_fraction(&self, k: usize) -> f64 {
        match self {
            LatentModel::Pca(m) => m.explained_variance_fraction(k),
            LatentModel::Ppca(m) => m.explained_variance_fraction(k),
            LatentModel::Fa(m) => m.explained_variance_fraction(k),
        }
    }

    /// Marginal covariance, for the probabilistic models only.
    pub fn covariance(&self) -> Option<&FactoredCovariance> {
        match self {
            LatentModel::Pca(_) => None,
            LatentModel::Ppca(m) => Some(m.covariance()),
            LatentModel::Fa(m) => Some(m.covariance()),
        }
    }

    pub fn report(&self) -> Option<&FitReport> {
        match self {
            LatentModel::Pca(_) => None,
            LatentModel::Ppca(m) => Some(&m.report),
            LatentModel::Fa(m) => Some(&m.report),
        }
    }

    /// `sum_n log N(x_n | mu, C)`.
    pub fn marginal_log_likelihood(&self, x: &DMatrix<f64>) -> Result<f64> {
        let cov = self.covariance().ok_or_else(|| {
            Error::Domain("PCA has no marginal likelihood".into())
        })?;
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut r = x.clone();
        for (c, m) in self.mean().iter().enumerate() {
            r.column_mut(c).add_scalar_mut(-m);
        }
        Ok(cov.log_likelihood_rows(&r))
    }
}

/// Column-wise `(min, max)` of the encoded training rows.
pub fn latent_bounds(model: &LatentModel, x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if x.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let z = model.encode_rows(x);
    Ok(z
        .column_iter()
        .map(|c| (c.min(), c.max()))
        .collect())
}

#[cfg(test)]
mod tests;
