//! Sample-covariance spectrum from the thin SVD of the centred data.
//!
//! With `Xc` the `N x D` centred data and `S = Xc^T Xc / N`, the eigenvalues of
//! `S` are `xi_i^2 / N` for the singular values `xi_i` of `Xc`. The smaller of
//! the two Gram matrices (`Xc Xc^T` or `Xc^T Xc`) is eigendecomposed so the
//! cost never involves a `D x D` matrix when `D > N`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as structurally zero.
pub const EFFECTIVE_RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CenteredData {
    pub mean: DVector<f64>,
    pub centered: DMatrix<f64>,
}

impl CenteredData {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: x.nrows(),
            });
        }
        let mean = x.row_mean().transpose();
        let mut centered = x.clone();
        for (c, m) in mean.iter().enumerate() {
            centered.column_mut(c).add_scalar_mut(-m);
        }
        Ok(Self { mean, centered })
    }

    pub fn n(&self) -> usize {
        self.centered.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centered.ncols()
    }

    /// `Tr(S)` with the `1/N` normalisation.
    pub fn total_variance(&self) -> f64 {
        self.centered.norm_squared() / self.n() as f64
    }

    /// `diag(S)`.
    pub fn variances(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_iterator(
            self.dim(),
            self.centered.column_iter().map(|c| c.norm_squared() / n),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// All `min(N, D)` eigenvalues of `S`, descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors (D x r) for the leading `r = effective_rank` eigenvalues.
    pub vectors: DMatrix<f64>,
    pub effective_rank: usize,
    pub total_variance: f64,
}

impl Spectrum {
    pub fn of(data: &CenteredData) -> Self {
        let n = data.n();
        let d = data.dim();
        let xc = &data.centered;
        let nf = n as f64;
        let (mut pairs, from_rows) = if n <= d {
            let gram = xc * xc.transpose();
            (sorted_eigen(gram), true)
        } else {
            let gram = xc.tr_mul(xc);
            (sorted_eigen(gram), false)
        };
        for p in &mut pairs {
            p.0 = p.0.max(0.0);
        }
        let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0 / nf).collect();
        let lead = eigenvalues.first().copied().unwrap_or(0.0);
        let effective_rank = if lead > 0.0 {
            eigenvalues
                .iter()
                .take_while(|&&l| l > EFFECTIVE_RANK_RTOL * lead)
                .count()
        } else {
            0
        };
        let mut vectors = DMatrix::zeros(d, effective_rank);
        for i in 0..effective_rank {
            let mut u = if from_rows {
                // right singular vector u = Xc^T v / xi
                xc.tr_mul(&pairs[i].1)
            } else {
                pairs[i].1.clone()
            };
            let norm = u.norm();
            u /= norm;
            // deterministic sign: largest-magnitude entry positive
            let imax = u.iamax();
            if u[imax] < 0.0 {
                u.neg_mut();
            }
            vectors.set_column(i, &u);
        }
        Self {
            eigenvalues,
            vectors,
            effective_rank,
            total_variance: data.total_variance(),
        }
    }

    /// Cumulative explained-variance fraction for `K = 0..=len`.
    pub fn explained_curve(&self) -> Vec<f64> {
        let total = self.total_variance;
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for l in &self.eigenvalues {
            acc += l;
            out.push(if total > 0.0 { (acc / total).min(1.0) } else { 0.0 });
        }
        out
    }

    /// Smallest `K >= 1` whose explained fraction reaches `threshold`.
    pub fn select_k(&self, threshold: f64) -> usize {
        let curve = self.explained_curve();
        curve
            .iter()
            .position(|&f| f >= threshold)
            .unwrap_or(curve.len() - 1)
            .max(1)
    }
}

fn sorted_eigen(gram: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(gram);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn wide_and_tall_agree_with_direct_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, d) in [(50, 8), (6, 20)] {
            let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            let data = CenteredData::new(&x).unwrap();
            let s = data.centered.tr_mul(&data.centered) / n as f64;
            let spec = Spectrum::of(&data);
            let u = &spec.vectors;
            let lam = DMatrix::from_diagonal(&DVector::from_column_slice(
                &spec.eigenvalues[..spec.effective_rank],
            ));
            let recon = u * lam * u.transpose();
            assert!((recon - &s).norm() < 1e-10, "n={n} d={d}");
            assert!((spec.total_variance - s.trace()).abs() < 1e-10);
        }
    }

    #[test]
    fn select_k_threshold() {
        let spec = Spectrum {
            eigenvalues: vec![4.0, 1.0, 0.0],
            vectors: DMatrix::zeros(3, 2),
            effective_rank: 2,
            total_variance: 5.0,
        };
        assert_eq!(spec.explained_curve(), vec![0.0, 0.8, 1.0, 1.0]);
        assert_eq!(spec.select_k(0.8), 1);
        assert_eq!(spec.select_k(0.99), 2);
    }
}
