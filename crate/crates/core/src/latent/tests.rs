use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::*;
use crate::latent::spectrum::Spectrum;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

/// N x D data whose sample covariance (1/N normalisation) has exactly `spectrum`.
fn exact_spectrum_data(rng: &mut ChaCha8Rng, n: usize, spectrum: &[f64]) -> DMatrix<f64> {
    let d = spectrum.len();
    // columns orthonormal and orthogonal to the ones vector
    let mut a = gaussian(rng, n, d + 1);
    a.set_column(0, &DVector::from_element(n, 1.0));
    let q = a.qr().q();
    let basis = q.columns(1, d).into_owned();
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        spectrum.iter().map(|l| (l * n as f64).sqrt()),
    ));
    let r = orthogonal(rng, d);
    let offset = gaussian(rng, 1, d);
    let mut x = basis * scale * r.transpose();
    for mut row in x.row_iter_mut() {
        row += &offset;
    }
    x
}

/// Data drawn from `x = W z + mu + eps` with diagonal noise `psi`.
fn generate(rng: &mut ChaCha8Rng, w: &DMatrix<f64>, psi: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let (d, k) = (w.nrows(), w.ncols());
    let z = gaussian(rng, n, k);
    let mut x = z * w.transpose();
    for c in 0..d {
        let s = psi[c].sqrt();
        for r in 0..n {
            let e: f64 = StandardNormal.sample(rng);
            x[(r, c)] += s * e;
        }
    }
    x
}

fn dense_log_pdf_sum(c: &DMatrix<f64>, mu: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let chol = Cholesky::new(c.clone()).unwrap();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let d = c.nrows() as f64;
    x.row_iter()
        .map(|row| {
            let r = row.transpose() - mu;
            -0.5 * (d * LN_2PI + log_det + r.dot(&chol.solve(&r)))
        })
        .sum()
}

/// sin of the largest principal angle between the column spans of `a` and `b`.
fn max_principal_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let resid = &qa - &qb * qb.tr_mul(&qa);
    resid.singular_values().max()
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] - w[0] >= -1e-9 * w[0].abs(), "decrease {} -> {}", w[0], w[1]);
    }
}

#[test]
fn ppca_closed_form_known_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = exact_spectrum_data(&mut rng, 30, &[5.0, 3.0, 1.0, 1.0, 1.0, 1.0]);
    let m = PpcaModel::fit_closed(&x, 2).unwrap();
    assert!((m.noise_variance - 1.0).abs() < 1e-10);
    let norms: Vec<f64> = m.loadings.column_iter().map(|c| c.norm()).collect();
    assert!((norms[0] - 2.0).abs() < 1e-10);
    assert!((norms[1] - 2f64.sqrt()).abs() < 1e-10);
    assert!(m.loadings.column(0).dot(&m.loadings.column(1)).abs() < 1e-10);
}

#[test]
fn ppca_sigma2_is_mean_discarded_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(&mut rng, 60, 12);
    let data = CenteredData::new(&x).unwrap();
    let spec = Spectrum::of(&data);
    let m = PpcaModel::from_spectrum(&data, &spec, 4).unwrap();
    let mean: f64 = spec.eigenvalues[4..12].iter().sum::<f64>() / 8.0;
    assert!((m.noise_variance - mean).abs() < 1e-10);
    let pca = PcaModel::from_spectrum(&data, &spec, 4).unwrap();
    assert!(max_principal_sine(&m.loadings, &pca.components) < 1e-8);
}

#[test]
fn ppca_noiseless_low_rank_gives_tiny_sigma2() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = gaussian(&mut rng, 8, 3);
    let x = gaussian(&mut rng, 25, 3) * basis.transpose();
    let m = PpcaModel::fit_closed(&x, 3).unwrap();
    assert!(m.noise_variance < 1e-10, "{}", m.noise_variance);
    // decode(encode(x)) reproduces training rows
    for r in 0..25 {
        let xr = x.row(r).transpose();
        assert!((m.decode(&m.encode(&xr)) - &xr).norm() < 1e-6);
    }
    assert!(matches!(
        PpcaModel::fit_closed(&x, 4),
        Err(Error::RankDeficient { effective_rank: 3, .. })
    ));
}

#[test]
fn ppca_closed_form_beats_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w_true = gaussian(&mut rng, 8, 2) * 2.0;
    let x = generate(&mut rng, &w_true, &DVector::from_element(8, 0.5), 300);
    let m = PpcaModel::fit_closed(&x, 2).unwrap();
    let best = m.report.log_likelihood;
    let lm = LatentModel::Ppca(m.clone());
    assert!((lm.marginal_log_likelihood(&x).unwrap() - best).abs() < 1e-8 * best.abs());
    let u = Uniform::new(0.5, 1.5).unwrap();
    for _ in 0..100 {
        let w = &m.loadings + gaussian(&mut rng, 8, 2) * 0.2;
        let s2 = m.noise_variance * u.sample(&mut rng);
        let p = PpcaModel::new(m.mean.clone(), w, s2, m.total_variance, FitReport::default()).unwrap();
        let ll = LatentModel::Ppca(p).marginal_log_likelihood(&x).unwrap();
        assert!(ll <= best + 1e-9 * best.abs());
    }
}

#[test]
fn ppca_ill_posed_k() {
    // flat spectrum: lambda_K equals sigma^2
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = exact_spectrum_data(&mut rng, 20, &[1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(PpcaModel::fit_closed(&x, 2), Err(Error::IllPosedK { k: 2, .. })));
}

#[test]
fn ppca_em_monotone_and_matches_closed_subspace() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let w_true = gaussian(&mut rng, 15, 3) * 1.5;
        let x = generate(&mut rng, &w_true, &DVector::from_element(15, 0.3), 200);
        let opts = EmOptions { seed, ..Default::default() };
        let em = PpcaModel::fit_em(&x, 3, &opts).unwrap();
        assert_monotone(&em.report.trace);
        let closed = PpcaModel::fit_closed(&x, 3).unwrap();
        assert!(max_principal_sine(&em.loadings, &closed.loadings) < 1e-3);
    }
}

#[test]
fn ppca_em_recovers_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dir = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]).normalize();
    let t = gaussian(&mut rng, 50, 1);
    let x = &t * dir.transpose();
    let em = PpcaModel::fit_em(&x, 1, &EmOptions { max_iter: 2000, tol: 1e-14, seed: 3 }).unwrap();
    let w = em.loadings.column(0).normalize();
    let cos = w.dot(&dir).abs().min(1.0);
    let sin = (&w - &dir * w.dot(&dir)).norm();
    assert!(sin < 1e-6 && cos > 0.0, "sin {sin}");
}

#[test]
fn ppca_em_infinite_tolerance_single_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = gaussian(&mut rng, 30, 5);
    let em = PpcaModel::fit_em(&x, 2, &EmOptions { tol: f64::INFINITY, ..Default::default() }).unwrap();
    assert_eq!(em.report.iterations, 1);
}

#[test]
fn ppca_encode_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w_true = gaussian(&mut rng, 12, 3);
    let x = generate(&mut rng, &w_true, &DVector::from_element(12, 0.2), 100);
    let m = PpcaModel::fit_closed(&x, 3).unwrap();
    assert!(m.encode(&m.mean).norm() < 1e-12);
    assert!((m.decode(&DVector::zeros(3)) - &m.mean).norm() == 0.0);
    let wtw_inv = m.loadings.tr_mul(&m.loadings).try_inverse().unwrap();
    let limit = PpcaModel::new(m.mean.clone(), m.loadings.clone(), 1e-12, m.total_variance, FitReport::default()).unwrap();
    let g1 = m.posterior_covariance();
    for _ in 0..100 {
        let xv = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng)) * 2.0 + &m.mean;
        let ls = &wtw_inv * m.loadings.tr_mul(&(&xv - &m.mean));
        assert!((limit.encode(&xv) - &ls).norm() < 1e-6);
        assert!(m.encode(&xv).norm() <= ls.norm() + 1e-12);
    }
    // posterior covariance sigma^2 M^-1 does not depend on x
    let mm = m.loadings.tr_mul(&m.loadings) + DMatrix::identity(3, 3) * m.noise_variance;
    let expected = mm.try_inverse().unwrap() * m.noise_variance;
    assert!((g1 - expected).norm() < 1e-12);
}

#[test]
fn fa_recovers_generating_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (d, k, n) = (20, 3, 5000);
    let w = gaussian(&mut rng, d, k);
    let u = Uniform::new(0.1, 1.0).unwrap();
    let psi = DVector::from_fn(d, |_, _| u.sample(&mut rng));
    let x = generate(&mut rng, &w, &psi, n);
    let fa = FaModel::fit_em(&x, k, &EmOptions::default()).unwrap();
    let mut c_true = &w * w.transpose();
    for i in 0..d {
        c_true[(i, i)] += psi[i];
    }
    let c_fit = fa.covariance().dense();
    let rel = (&c_fit - &c_true).norm() / c_true.norm();
    assert!(rel < 0.05, "relative error {rel}");
    assert_monotone(&fa.report.trace);
    // communality + uniqueness on the diagonal
    let comm = fa.communalities();
    for i in 0..d {
        assert!((c_fit[(i, i)] - comm[i] - fa.uniquenesses[i]).abs() < 1e-12);
    }
}

#[test]
fn fa_em_monotone_on_random_datasets() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let w = gaussian(&mut rng, 12, 2);
        let u = Uniform::new(0.05, 2.0).unwrap();
        let psi = DVector::from_fn(12, |_, _| u.sample(&mut rng));
        let x = generate(&mut rng, &w, &psi, 150);
        let fa = FaModel::fit_em(&x, 2, &EmOptions::default()).unwrap();
        assert_monotone(&fa.report.trace);
        assert!(fa.uniquenesses.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn fa_matches_ppca_on_isotropic_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = gaussian(&mut rng, 10, 2) * 2.0;
    let n = 20_000;
    let x = generate(&mut rng, &w, &DVector::from_element(10, 0.5), n);
    let ppca = PpcaModel::fit_closed(&x, 2).unwrap();
    let fa = FaModel::fit_em(&x, 2, &EmOptions::default()).unwrap();
    let gap = (fa.report.log_likelihood - ppca.report.log_likelihood) / n as f64;
    assert!(gap.abs() < 1e-3, "gap {gap} nats/point");
}

#[test]
fn fa_encode_woodbury_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 30;
    let w = gaussian(&mut rng, d, 4);
    let u = Uniform::new(0.1, 1.0).unwrap();
    let psi = DVector::from_fn(d, |_, _| u.sample(&mut rng));
    let mu = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let fa = FaModel::new(mu.clone(), w.clone(), psi, 1.0, FitReport::default()).unwrap();
    let c_inv = fa.covariance().dense().try_inverse().unwrap();
    assert!(fa.encode(&mu).norm() < 1e-14);
    for _ in 0..10 {
        let x = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let dense = w.transpose() * &c_inv * (&x - &mu);
        assert!((fa.encode(&x) - dense).norm() < 1e-9);
    }
    let g = fa.posterior_covariance();
    let psi_inv = DMatrix::from_diagonal(&fa.uniquenesses.map(|p| 1.0 / p));
    let expected = (w.transpose() * psi_inv * &w + DMatrix::identity(4, 4)).try_inverse().unwrap();
    assert!((g - expected).norm() < 1e-10);
}

#[test]
fn marginal_likelihood_cases() {
    let d = 7;
    let mu = DVector::from_element(d, 0.3);
    let p = PpcaModel::new(mu.clone(), DMatrix::zeros(d, 1), 1.0, 1.0, FitReport::default()).unwrap();
    let x = DMatrix::from_row_slice(1, d, mu.as_slice());
    let ll = LatentModel::Ppca(p).marginal_log_likelihood(&x).unwrap();
    assert!((ll + 0.5 * d as f64 * LN_2PI).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let w = gaussian(&mut rng, 10, 3);
    let u = Uniform::new(0.2, 1.5).unwrap();
    let psi = DVector::from_fn(10, |_, _| u.sample(&mut rng));
    let mu = DVector::from_fn(10, |_, _| StandardNormal.sample(&mut rng));
    let data = gaussian(&mut rng, 25, 10);
    let models: Vec<LatentModel> = vec![
        PpcaModel::new(mu.clone(), w.clone(), 0.4, 1.0, FitReport::default()).unwrap().into(),
        FaModel::new(mu.clone(), w.clone(), psi.clone(), 1.0, FitReport::default()).unwrap().into(),
    ];
    for m in &models {
        let dense = dense_log_pdf_sum(&m.covariance().unwrap().dense(), &mu, &data);
        assert!((m.marginal_log_likelihood(&data).unwrap() - dense).abs() < 1e-8);
    }
    // rotation invariance
    for _ in 0..10 {
        let r = orthogonal(&mut rng, 3);
        let wr = &w * &r;
        let pairs: Vec<(LatentModel, LatentModel)> = vec![
            (
                PpcaModel::new(mu.clone(), w.clone(), 0.4, 1.0, FitReport::default()).unwrap().into(),
                PpcaModel::new(mu.clone(), wr.clone(), 0.4, 1.0, FitReport::default()).unwrap().into(),
            ),
            (
                FaModel::new(mu.clone(), w.clone(), psi.clone(), 1.0, FitReport::default()).unwrap().into(),
                FaModel::new(mu.clone(), wr.clone(), psi.clone(), 1.0, FitReport::default()).unwrap().into(),
            ),
        ];
        for (a, b) in pairs {
            let (ca, cb) = (a.covariance().unwrap().dense(), b.covariance().unwrap().dense());
            assert!((ca - cb).amax() < 1e-10);
            let (la, lb) = (
                a.marginal_log_likelihood(&data).unwrap(),
                b.marginal_log_likelihood(&data).unwrap(),
            );
            assert!((la - lb).abs() < 1e-9);
        }
    }
}

#[test]
fn explained_variance_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = gaussian(&mut rng, 10, 4);
    let x = generate(&mut rng, &w, &DVector::from_element(10, 0.1), 400);
    let models: Vec<LatentModel> = vec![
        PcaModel::fit(&x, 4).unwrap().into(),
        PpcaModel::fit_closed(&x, 4).unwrap().into(),
        FaModel::fit_em(&x, 4, &EmOptions::default()).unwrap().into(),
    ];
    for m in &models {
        assert_eq!(m.explained_variance_fraction(0), 0.0);
        let f: Vec<f64> = (0..=4).map(|k| m.explained_variance_fraction(k)).collect();
        assert!(f.windows(2).all(|p| p[1] >= p[0]));
        assert!(f[4] <= 1.0);
    }
    // PCA and PPCA report the same eigenvalue fractions
    for k in 0..=4 {
        let a = models[0].explained_variance_fraction(k);
        let b = models[1].explained_variance_fraction(k);
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn latent_bounds_cover_training_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let w = gaussian(&mut rng, 6, 2);
    let half = generate(&mut rng, &w, &DVector::from_element(6, 0.05), 200);
    // symmetric data: every row and its reflection about the origin
    let x = DMatrix::from_fn(400, 6, |r, c| if r < 200 { half[(r, c)] } else { -half[(r - 200, c)] });
    let m: LatentModel = PpcaModel::fit_closed(&x, 2).unwrap().into();
    let b = latent_bounds(&m, &x).unwrap();
    for (lo, hi) in &b {
        assert!((lo + hi).abs() < 1e-9 * hi.abs().max(1.0));
    }
    let z = m.encode_rows(&x);
    for r in 0..x.nrows() {
        for k in 0..2 {
            assert!(z[(r, k)] >= b[k].0 && z[(r, k)] <= b[k].1);
        }
    }
    let single = x.rows(0, 1).into_owned();
    let b1 = latent_bounds(&m, &single).unwrap();
    let z0 = m.encode(&x.row(0).transpose());
    for k in 0..2 {
        assert_eq!(b1[k], (z0[k], z0[k]));
    }
}
