//! Density estimation and anomaly scoring on top of a fitted probabilistic model.

pub mod chi2;
pub mod gaussian;
pub mod threshold;
pub mod volume;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::LatentModel;

pub use chi2::{chi2_cdf, chi_square_diagnostic, ks_statistic, ChiSquareDiagnostic};
pub use gaussian::GaussianDensity;
pub use threshold::{
    exceedance, histogram, quantile_r7, threshold_from_distances, AnomalyThreshold, HistogramBin,
    ThresholdRule,
};
pub use volume::volume_ratio;

/// Threshold from the reconstructed training designs, plus the distances used.
pub fn threshold_phi_max(
    model: &LatentModel,
    x: &DMatrix<f64>,
    rule: ThresholdRule,
) -> Result<(AnomalyThreshold, Vec<f64>)> {
    if x.nrows() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: x.nrows(),
        });
    }
    let density = GaussianDensity::from_model(model)?;
    let d = density.reconstruction_distances(model, x)?;
    let t = threshold_from_distances(&d, rule, crate::io::matrix_hash(x))?;
    Ok((t, d))
}

/// `n` latent vectors drawn uniformly from the box `scale * [lo_k, hi_k]`.
pub fn sample_uniform_latent(bounds: &[(f64, f64)], n: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(n, bounds.len());
    for r in 0..n {
        for (c, &(lo, hi)) in bounds.iter().enumerate() {
            let u: f64 = rng.random();
            z[(r, c)] = scale * (lo + u * (hi - lo));
        }
    }
    z
}

/// `n` fresh draws from the model marginal `N(mu, W W^T + Psi)`.
pub fn sample_marginal(model: &LatentModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let cov = model
        .covariance()
        .ok_or_else(|| Error::Domain("PCA defines no marginal density".into()))?;
    let (d, k) = (model.dim(), model.latent_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: DVector<f64> = cov.noise().map(f64::sqrt);
    let mut x = DMatrix::zeros(n, d);
    for r in 0..n {
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut row = model.loadings() * z + model.mean();
        for i in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            row[i] += sd[i] * e;
        }
        x.set_row(r, &row.transpose());
    }
    Ok(x)
}
