use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::covariance::FactoredCovariance;
use super::spectrum::{CenteredData, Spectrum};
use super::{EmOptions, FitReport};
use crate::error::{Error, Result};

/// Relative gap below which `lambda_K` and `sigma^2` are treated as equal.
pub const ILL_POSED_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PpcaModel {
    pub mean: DVector<f64>,
    /// D x K loadings.
    pub loadings: DMatrix<f64>,
    pub noise_variance: f64,
    /// `Tr(S)` of the training data, for explained-variance fractions.
    pub total_variance: f64,
    pub report: FitReport,
    cov: FactoredCovariance,
}

impl PpcaModel {
    pub fn new(
        mean: DVector<f64>,
        loadings: DMatrix<f64>,
        noise_variance: f64,
        total_variance: f64,
        report: FitReport,
    ) -> Result<Self> {
        if mean.len() != loadings.nrows() {
            return Err(Error::DimensionMismatch {
                expected: loadings.nrows(),
                got: mean.len(),
            });
        }
        let cov = FactoredCovariance::isotropic(loadings.clone(), noise_variance)?;
        Ok(Self {
            mean,
            loadings,
            noise_variance,
            total_variance,
            report,
            cov,
        })
    }

    /// Closed-form maximum-likelihood fit from the top-K eigenpairs.
    pub fn fit_closed(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let data = CenteredData::new(x)?;
        let spectrum = Spectrum::of(&data);
        Self::from_spectrum(&data, &spectrum, k)
    }

    pub fn from_spectrum(data: &CenteredData, spectrum: &Spectrum, k: usize) -> Result<Self> {
        let available = spectrum.eigenvalues.len();
        if k == 0 || k > spectrum.effective_rank {
            return Err(Error::RankDeficient {
                requested: k,
                effective_rank: spectrum.effective_rank,
            });
        }
        if k >= available {
            return Err(Error::RankDeficient {
                requested: k,
                effective_rank: available.saturating_sub(1),
            });
        }
        let sigma2 = discarded_mean(spectrum, k);
        let lambda_k = spectrum.eigenvalues[k - 1];
        // eigenvalues equal up to rounding count as equal
        if lambda_k <= sigma2 * (1.0 + ILL_POSED_RTOL) {
            return Err(Error::IllPosedK {
                k,
                lambda_k,
                sigma2,
            });
        }
        let mut w = spectrum.vectors.columns(0, k).into_owned();
        for i in 0..k {
            w.column_mut(i).scale_mut((spectrum.eigenvalues[i] - sigma2).sqrt());
        }
        let cov = FactoredCovariance::isotropic(w.clone(), sigma2)?;
        let ll = cov.log_likelihood_rows(&data.centered);
        let report = FitReport {
            iterations: 0,
            log_likelihood: ll,
            trace: vec![ll],
            floored: Vec::new(),
            converged: true,
        };
        Self::new(data.mean.clone(), w, sigma2, spectrum.total_variance, report)
    }

    /// EM fit started from random loadings drawn with `seed`.
    pub fn fit_em(x: &DMatrix<f64>, k: usize, opts: &EmOptions) -> Result<Self> {
        let data = CenteredData::new(x)?;
        let (n, d) = (data.n(), data.dim());
        if k == 0 || k >= n.min(d) {
            return Err(Error::RankDeficient {
                requested: k,
                effective_rank: n.min(d).saturating_sub(1),
            });
        }
        let total = data.total_variance();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = (total / d as f64).sqrt();
        let w0 = DMatrix::from_fn(d, k, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            scale * g
        });
        Self::fit_em_from(&data, w0, total / d as f64, opts)
    }

    pub fn fit_em_from(
        data: &CenteredData,
        mut w: DMatrix<f64>,
        mut sigma2: f64,
        opts: &EmOptions,
    ) -> Result<Self> {
        let (n, d) = (data.n() as f64, data.dim() as f64);
        let k = w.ncols();
        let xc = &data.centered;
        let trace_s = xc.norm_squared();
        let sigma2_floor = 1e-300_f64.max(1e-15 * trace_s / (n * d));

        let mut ll = FactoredCovariance::isotropic(w.clone(), sigma2)?.log_likelihood_rows(xc);
        let mut trace = vec![ll];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            let m = w.tr_mul(&w) + DMatrix::identity(k, k) * sigma2;
            let m_chol = Cholesky::new(m).ok_or_else(|| Error::Numerical {
                iteration: iterations,
                reason: "M is not positive definite".into(),
            })?;
            let m_inv = m_chol.inverse();
            let ez = xc * &w * &m_inv; // N x K
            let sxz = xc.tr_mul(&ez); // D x K
            let szz = &m_inv * (n * sigma2) + ez.tr_mul(&ez);
            let szz_chol = Cholesky::new(szz.clone()).ok_or_else(|| Error::Numerical {
                iteration: iterations,
                reason: "sum of E[z z^T] is not positive definite".into(),
            })?;
            let w_new = szz_chol.solve(&sxz.transpose()).transpose();
            let cross = w_new.dot(&sxz);
            let quad = (&szz * w_new.tr_mul(&w_new)).trace();
            sigma2 = ((trace_s - 2.0 * cross + quad) / (n * d)).max(sigma2_floor);
            w = w_new;

            let ll_new = FactoredCovariance::isotropic(w.clone(), sigma2)?.log_likelihood_rows(xc);
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
        let report = FitReport {
            iterations,
            log_likelihood: ll,
            trace,
            floored: Vec::new(),
            converged,
        };
        Self::new(data.mean.clone(), w, sigma2, data.total_variance(), report)
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn covariance(&self) -> &FactoredCovariance {
        &self.cov
    }

    /// Posterior mean `M^-1 W^T (x - mu)`.
    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        self.cov.posterior_mean(&(x - &self.mean))
    }

    /// Posterior covariance `sigma^2 M^-1`, independent of x.
    pub fn posterior_covariance(&self) -> DMatrix<f64> {
        self.cov.posterior_covariance()
    }

    /// Conditional mean `W z + mu`.
    pub fn decode(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.loadings * z + &self.mean
    }

    /// Latent variances `lambda_k = eig_k(W^T W) + sigma^2`, descending.
    pub fn component_variances(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.loadings.tr_mul(&self.loadings));
        let mut v: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0) + self.noise_variance).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn explained_variance_fraction(&self, k: usize) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        let s: f64 = self.component_variances().iter().take(k).sum();
        (s / self.total_variance).min(1.0)
    }
}

/// Mean of the discarded eigenvalues `K+1..D'`, with `D' = max(effective rank, K+1)`.
pub fn discarded_mean(spectrum: &Spectrum, k: usize) -> f64 {
    let end = spectrum.effective_rank.max(k + 1).min(spectrum.eigenvalues.len());
    let tail = &spectrum.eigenvalues[k..end];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let lead = spectrum.eigenvalues[0];
    mean.max(1e-15 * lead).max(f64::MIN_POSITIVE)
}
