use nalgebra::{Cholesky, DMatrix, DVector};

use super::covariance::FactoredCovariance;
use super::ppca::PpcaModel;
use super::spectrum::{CenteredData, Spectrum};
use super::{EmOptions, FitReport};
use crate::error::{Error, Result};

/// Uniquenesses are floored at this fraction of the mean sample variance.
pub const PSI_FLOOR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FaModel {
    pub mean: DVector<f64>,
    /// D x K loadings, columns ordered by decreasing norm.
    pub loadings: DMatrix<f64>,
    /// `diag(Psi)`.
    pub uniquenesses: DVector<f64>,
    pub total_variance: f64,
    pub report: FitReport,
    cov: FactoredCovariance,
}

impl FaModel {
    pub fn new(
        mean: DVector<f64>,
        loadings: DMatrix<f64>,
        uniquenesses: DVector<f64>,
        total_variance: f64,
        report: FitReport,
    ) -> Result<Self> {
        if mean.len() != loadings.nrows() {
            return Err(Error::DimensionMismatch {
                expected: loadings.nrows(),
                got: mean.len(),
            });
        }
        let cov = FactoredCovariance::diagonal(loadings.clone(), uniquenesses.clone())?;
        Ok(Self {
            mean,
            loadings,
            uniquenesses,
            total_variance,
            report,
            cov,
        })
    }

    /// EM fit warm-started from the closed-form PPCA loadings.
    pub fn fit_em(x: &DMatrix<f64>, k: usize, opts: &EmOptions) -> Result<Self> {
        let data = CenteredData::new(x)?;
        if data.n() <= k || data.dim() < k || k == 0 {
            return Err(Error::InsufficientData {
                needed: k + 1,
                got: data.n(),
            });
        }
        let spectrum = Spectrum::of(&data);
        let ppca = PpcaModel::from_spectrum(&data, &spectrum, k)?;
        let floor = psi_floor(&data);
        let variances = data.variances();
        let psi0 = DVector::from_fn(data.dim(), |i, _| {
            (variances[i] - ppca.loadings.row(i).norm_squared()).max(floor)
        });
        Self::fit_em_from(&data, ppca.loadings.clone(), psi0, opts)
    }

    pub fn fit_em_from(
        data: &CenteredData,
        mut w: DMatrix<f64>,
        mut psi: DVector<f64>,
        opts: &EmOptions,
    ) -> Result<Self> {
        let n = data.n() as f64;
        let k = w.ncols();
        let xc = &data.centered;
        let s_diag = data.variances();
        let floor = psi_floor(data);
        psi.apply(|p| *p = p.max(floor));

        let mut cov = FactoredCovariance::diagonal(w.clone(), psi.clone())?;
        let mut ll = cov.log_likelihood_rows(xc);
        let mut trace = vec![ll];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            // E-step: posterior moments under the current parameters.
            let g = cov.posterior_covariance();
            let ez = cov.posterior_mean_rows(xc); // N x K
            let szz = g * n + ez.tr_mul(&ez);
            let sxz = xc.tr_mul(&ez); // D x K
            // M-step.
            let chol = Cholesky::new(szz).ok_or_else(|| Error::Numerical {
                iteration: iterations,
                reason: "sum of E[z z^T] is not positive definite".into(),
            })?;
            w = chol.solve(&sxz.transpose()).transpose();
            for i in 0..psi.len() {
                let explained = w.row(i).dot(&sxz.row(i)) / n;
                psi[i] = (s_diag[i] - explained).max(floor);
            }
            cov = FactoredCovariance::diagonal(w.clone(), psi.clone()).map_err(|_| Error::Numerical {
                iteration: iterations,
                reason: "marginal covariance lost positive definiteness".into(),
            })?;
            let ll_new = cov.log_likelihood_rows(xc);
            if !ll_new.is_finite() {
                return Err(Error::Numerical {
                    iteration: iterations,
                    reason: "non-finite log-likelihood".into(),
                });
            }
            trace.push(ll_new);
            let rel = (ll_new - ll) / ll.abs().max(f64::MIN_POSITIVE);
            ll = ll_new;
            if rel < opts.tol {
                converged = true;
                break;
            }
        }
        // Column permutation is an orthogonal rotation, so the likelihood is unchanged.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| w.column(b).norm_squared().total_cmp(&w.column(a).norm_squared()));
        let w = DMatrix::from_columns(&order.iter().map(|&c| w.column(c)).collect::<Vec<_>>());
        let floored = (0..psi.len()).filter(|&i| psi[i] <= floor).collect();
        let report = FitReport {
            iterations,
            log_likelihood: ll,
            trace,
            floored,
            converged,
        };
        Self::new(data.mean.clone(), w, psi, data.total_variance(), report)
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn covariance(&self) -> &FactoredCovariance {
        &self.cov
    }

    /// `W^T C^-1 (x - mu)` through the Woodbury form.
    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        self.cov.posterior_mean(&(x - &self.mean))
    }

    /// `G = (I + W^T Psi^-1 W)^-1`.
    pub fn posterior_covariance(&self) -> DMatrix<f64> {
        self.cov.posterior_covariance()
    }

    pub fn decode(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.loadings * z + &self.mean
    }

    /// Communality `|w_i|^2` of each coordinate.
    pub fn communalities(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.loadings.nrows(),
            self.loadings.row_iter().map(|r| r.norm_squared()),
        )
    }

    pub fn explained_variance_fraction(&self, k: usize) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        let k = k.min(self.latent_dim());
        let s: f64 = (0..k).map(|c| self.loadings.column(c).norm_squared()).sum();
        (s / self.total_variance).min(1.0)
    }
}

pub fn psi_floor(data: &CenteredData) -> f64 {
    let mean_var = data.total_variance() / data.dim() as f64;
    (PSI_FLOOR_RATIO * mean_var).max(f64::MIN_POSITIVE)
}
