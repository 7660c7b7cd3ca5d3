//! Low-rank-plus-diagonal covariance `C = W W^T + Psi` kept in factored form.
//!
//! Nothing here ever forms a `D x D` matrix. Quadratic forms are evaluated in
//! the whitened frame `r^ = Psi^(-1/2) r`, `W^ = Psi^(-1/2) W`, where
//! `C^-1 = Psi^(-1/2) (I - W^ B^-1 W^T) Psi^(-1/2)` with `B = I + W^T W^`.
//! To avoid cancellation when `Psi` is tiny relative to `W W^T`, the quadratic
//! form is split into the part orthogonal to `span(W^)` and the in-span part:
//! `q = |r^ - W^ c|^2 + c^T B^-1 a`, with `a = W^T r^` and `c = (W^T W^)^-1 a`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `Psi = sigma^2 I`.
    Isotropic,
    /// General diagonal `Psi`.
    Diagonal,
}

#[derive(Debug, Clone)]
pub struct FactoredCovariance {
    kind: NoiseKind,
    w: DMatrix<f64>,
    psi: DVector<f64>,
    inv_sqrt_psi: DVector<f64>,
    w_hat: DMatrix<f64>,
    /// Cholesky of `B = I + W^T W^`.
    b_chol: Cholesky<f64, Dyn>,
    /// Cholesky of `W^T W^`; absent when `W` is rank deficient.
    q_chol: Option<Cholesky<f64, Dyn>>,
    log_det: f64,
}

impl FactoredCovariance {
    pub fn isotropic(w: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let d = w.nrows();
        Self::build(NoiseKind::Isotropic, w, DVector::from_element(d, sigma2))
    }

    pub fn diagonal(w: DMatrix<f64>, psi: DVector<f64>) -> Result<Self> {
        Self::build(NoiseKind::Diagonal, w, psi)
    }

    fn build(kind: NoiseKind, w: DMatrix<f64>, psi: DVector<f64>) -> Result<Self> {
        if psi.len() != w.nrows() {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                got: psi.len(),
            });
        }
        if psi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Numerical {
                iteration: 0,
                reason: "noise variances must be positive and finite".into(),
            });
        }
        let inv_sqrt_psi = psi.map(|p| 1.0 / p.sqrt());
        let mut w_hat = w.clone();
        for (r, s) in inv_sqrt_psi.iter().enumerate() {
            w_hat.row_mut(r).scale_mut(*s);
        }
        let k = w.ncols();
        let q = w_hat.tr_mul(&w_hat);
        let b = DMatrix::identity(k, k) + &q;
        let b_chol = Cholesky::new(b).ok_or_else(|| Error::Numerical {
            iteration: 0,
            reason: "I + W^T Psi^-1 W is not positive definite".into(),
        })?;
        let q_chol = well_conditioned_cholesky(q);
        let log_det = psi.iter().map(|p| p.ln()).sum::<f64>()
            + 2.0 * b_chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(Self {
            kind,
            w,
            psi,
            inv_sqrt_psi,
            w_hat,
            b_chol,
            q_chol,
            log_det,
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn noise(&self) -> &DVector<f64> {
        &self.psi
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `G = (I + W^T Psi^-1 W)^-1`; for isotropic noise this equals `sigma^2 M^-1`.
    pub fn posterior_covariance(&self) -> DMatrix<f64> {
        self.b_chol.inverse()
    }

    /// `W^T C^-1 r`, i.e. the posterior mean of the latent variable for residual `r`.
    pub fn posterior_mean(&self, r: &DVector<f64>) -> DVector<f64> {
        // W^T C^-1 = G W^T Psi^-1
        let scaled = r.component_mul(&self.inv_sqrt_psi);
        let a = self.w_hat.tr_mul(&scaled);
        self.b_chol.solve(&a)
    }

    /// Posterior means for every row of `r` (N x D), returned as N x K.
    pub fn posterior_mean_rows(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let a = self.whiten_rows(r) * &self.w_hat; // N x K
        self.b_chol.solve(&a.transpose()).transpose()
    }

    fn whiten_rows(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = r.clone();
        for (c, s) in self.inv_sqrt_psi.iter().enumerate() {
            out.column_mut(c).scale_mut(*s);
        }
        out
    }

    /// `C^-1 v` through the Woodbury identity in its textbook form for each noise kind.
    pub fn inverse_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            NoiseKind::Isotropic => {
                // sigma^-2 (v - W M^-1 W^T v), M = W^T W + sigma^2 I
                let s2 = self.psi[0];
                let m = self.w.tr_mul(&self.w) + DMatrix::identity(self.latent_dim(), self.latent_dim()) * s2;
                let m_chol = Cholesky::new(m).expect("M is positive definite for sigma^2 > 0");
                let inner = m_chol.solve(&self.w.tr_mul(v));
                (v - &self.w * inner) / s2
            }
            NoiseKind::Diagonal => {
                // Psi^-1 v - Psi^-1 W G W^T Psi^-1 v
                let psi_inv_v = v.component_div(&self.psi);
                let g = self.posterior_covariance();
                let inner = &g * self.w.tr_mul(&psi_inv_v);
                psi_inv_v - (&self.w * inner).component_div(&self.psi)
            }
        }
    }

    /// `r^T C^-1 r` for a single residual.
    pub fn quad_form(&self, r: &DVector<f64>) -> f64 {
        let r_hat = r.component_mul(&self.inv_sqrt_psi);
        let a = self.w_hat.tr_mul(&r_hat);
        self.split_quad(&r_hat, &a)
    }

    fn split_quad(&self, r_hat: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let b_inv_a = self.b_chol.solve(a);
        match &self.q_chol {
            Some(q) => {
                let c = q.solve(a);
                let perp = r_hat - &self.w_hat * &c;
                (perp.norm_squared() + c.dot(&b_inv_a)).max(0.0)
            }
            None => (r_hat.norm_squared() - a.dot(&b_inv_a)).max(0.0),
        }
    }

    /// Quadratic forms for every row of `r` (N x D).
    pub fn quad_form_rows(&self, r: &DMatrix<f64>) -> Vec<f64> {
        let r_hat = self.whiten_rows(r);
        let a = &r_hat * &self.w_hat; // N x K
        let b_inv_a = self.b_chol.solve(&a.transpose()); // K x N
        match &self.q_chol {
            Some(q) => {
                let c = q.solve(&a.transpose()); // K x N
                let perp = &r_hat - c.tr_mul(&self.w_hat.transpose()); // N x D
                (0..r.nrows())
                    .map(|n| {
                        let p = perp.row(n).norm_squared();
                        (p + c.column(n).dot(&b_inv_a.column(n))).max(0.0)
                    })
                    .collect()
            }
            None => (0..r.nrows())
                .map(|n| {
                    (r_hat.row(n).norm_squared() - a.row(n).transpose().dot(&b_inv_a.column(n)))
                        .max(0.0)
                })
                .collect(),
        }
    }

    /// `log N(x | mu, C)` given the residual `x - mu`.
    pub fn log_pdf(&self, r: &DVector<f64>) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.quad_form(r))
    }

    /// `sum_n log N(x_n | mu, C)` over residual rows.
    pub fn log_likelihood_rows(&self, r: &DMatrix<f64>) -> f64 {
        let n = r.nrows() as f64;
        let quad: f64 = self.quad_form_rows(r).iter().sum();
        -0.5 * (n * (self.dim() as f64 * LN_2PI + self.log_det) + quad)
    }

    /// Dense `W W^T + Psi`; intended for small-D checks.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut c = &self.w * self.w.transpose();
        for i in 0..self.dim() {
            c[(i, i)] += self.psi[i];
        }
        c
    }
}

fn well_conditioned_cholesky(q: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let max_diag = q.diagonal().iter().cloned().fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let chol = Cholesky::new(q)?;
    let l = chol.l_dirty().diagonal();
    let min_l = l.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_l = l.iter().cloned().fold(0.0, f64::max);
    (min_l > 1e-6 * max_l).then_some(chol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn models(d: usize, k: usize, seed: u64) -> Vec<FactoredCovariance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(&mut rng, d, k);
        let u = Uniform::new(0.2, 2.0).unwrap();
        let psi = DVector::from_fn(d, |_, _| u.sample(&mut rng));
        vec![
            FactoredCovariance::isotropic(w.clone(), 0.7).unwrap(),
            FactoredCovariance::diagonal(w, psi).unwrap(),
        ]
    }

    #[test]
    fn woodbury_inverse_matches_dense() {
        for c in models(50, 6, 1) {
            let dense = c.dense();
            for col in 0..50 {
                let applied = c.inverse_apply(&dense.column(col).into_owned());
                for row in 0..50 {
                    let expected = if row == col { 1.0 } else { 0.0 };
                    assert!((applied[row] - expected).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn log_pdf_matches_dense_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in models(10, 3, 5) {
            let dense = c.dense();
            let chol = Cholesky::new(dense.clone()).unwrap();
            let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            for _ in 0..20 {
                let r = DVector::from_fn(10, |_, _| StandardNormal.sample(&mut rng));
                let quad = r.dot(&chol.solve(&r));
                let expected = -0.5 * (10.0 * LN_2PI + log_det + quad);
                assert!((c.log_pdf(&r) - expected).abs() < 1e-8);
                assert!((c.quad_form(&r) - quad).abs() < 1e-9 * quad.max(1.0));
            }
        }
    }

    #[test]
    fn batch_and_single_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in models(12, 4, 9) {
            let r = random_matrix(&mut rng, 7, 12);
            let batch = c.quad_form_rows(&r);
            let means = c.posterior_mean_rows(&r);
            for n in 0..7 {
                let row = r.row(n).transpose();
                assert!((batch[n] - c.quad_form(&row)).abs() < 1e-10 * batch[n].max(1.0));
                let m = c.posterior_mean(&row);
                assert!((means.row(n).transpose() - m).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_loadings_identity() {
        let c = FactoredCovariance::isotropic(DMatrix::zeros(4, 1), 1.0).unwrap();
        let r = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert!((c.quad_form(&r) - r.norm_squared()).abs() < 1e-12);
        assert!(c.log_det().abs() < 1e-15);
    }

    #[test]
    fn tiny_noise_keeps_in_span_quadratic_accurate() {
        // r in span(W): q = c^T M^-1 a stays finite as sigma^2 -> 0.
        let w = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let r = DVector::from_vec(vec![0.5, 1.0, 1.0]);
        let c = FactoredCovariance::isotropic(w, 1e-14).unwrap();
        // C restricted to span(W): eigenvalue 9 + sigma^2, |r|^2 = 2.25
        assert!((c.quad_form(&r) - 2.25 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_positive_noise() {
        assert!(FactoredCovariance::isotropic(DMatrix::zeros(3, 1), 0.0).is_err());
        assert!(FactoredCovariance::diagonal(DMatrix::zeros(2, 1), DVector::from_vec(vec![1.0, -1.0])).is_err());
    }
}
