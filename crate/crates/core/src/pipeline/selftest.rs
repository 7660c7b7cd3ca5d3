//! Fast invariant suite behind the `selftest` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{threshold_from_distances, volume_ratio, ThresholdRule};
use crate::geometry::{bernstein, deform, ActiveVariable, FfdLattice, Geometry};
use crate::latent::{CenteredData, FactoredCovariance, LatentModel, PcaModel, PpcaModel, Spectrum};
use crate::optim::{ccd_init, direct_minimize, BoxBounds};
use crate::problem::{penalty_value, PenaltySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn ffd_affinity(rng: &mut ChaCha8Rng) -> Check {
    let lattice = FfdLattice {
        origin: [0.0; 3],
        axes: [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        degrees: [3, 2, 2],
        active: (0..3)
            .map(|a| ActiveVariable {
                node: [1, 1, 1],
                axis: a,
                lower: -1.0,
                upper: 1.0,
            })
            .collect(),
    };
    let coords: Vec<f64> = (0..300).map(|i| rng.random::<f64>() * if i % 3 == 0 { 2.0 } else { 1.0 }).collect();
    let g = Geometry::new(coords).expect("finite coordinates");
    let lat = [lattice];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v1: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
        let g0 = g.to_vector();
        let d = |v: &[f64]| deform(&g, &lat, v).map(|x| x.to_vector() - &g0);
        match (d(&mix), d(&v1), d(&v2)) {
            (Ok(m), Ok(x1), Ok(x2)) => worst = worst.max((m - a * x1 - b * x2).amax()),
            _ => return check("ffd_affinity", false, "deformation failed".into()),
        }
    }
    check("ffd_affinity", worst < 1e-10, format!("max residual {worst:e}"))
}

fn bernstein_partition() -> Check {
    let mut worst: f64 = 0.0;
    for r in 0..=10 {
        for i in 0..=100 {
            let chi = i as f64 / 100.0;
            let s: f64 = (0..=r).map(|v| bernstein(v, r, chi).unwrap_or(f64::NAN)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    check("bernstein_partition_of_unity", worst < 1e-13, format!("max error {worst:e}"))
}

fn ppca_matches_pca(rng: &mut ChaCha8Rng) -> Check {
    let w = gaussian(rng, 15, 3) * 3.0;
    let z = gaussian(rng, 200, 3);
    let x = z * w.transpose() + gaussian(rng, 200, 15) * 0.1;
    let (Ok(pca), Ok(ppca)) = (PcaModel::fit(&x, 3), PpcaModel::fit_closed(&x, 3)) else {
        return check("ppca_vs_pca", false, "fit failed".into());
    };
    let u = &pca.components;
    let wp = &ppca.loadings;
    let resid = (wp - u * (u.transpose() * wp)).norm() / wp.norm();
    let sigma_ok = CenteredData::new(&x).map(|d| Spectrum::of(&d)).is_ok_and(|sp| {
        let tail = &sp.eigenvalues[3..sp.effective_rank];
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        (m - ppca.noise_variance).abs() <= 1e-10 * m.max(1.0)
    });
    check(
        "ppca_vs_pca",
        resid < 1e-8 && sigma_ok,
        format!("subspace residual {resid:e}, sigma^2 {}", ppca.noise_variance),
    )
}

fn woodbury(rng: &mut ChaCha8Rng) -> Check {
    let w = gaussian(rng, 30, 4);
    let psi = DVector::from_fn(30, |_, _| 0.5 + rng.random::<f64>());
    let Ok(c) = FactoredCovariance::diagonal(w, psi) else {
        return check("woodbury_inverse", false, "construction failed".into());
    };
    let dense = c.dense();
    let mut worst: f64 = 0.0;
    for j in 0..30 {
        let col = c.inverse_apply(&dense.column(j).into_owned());
        let mut e = DVector::zeros(30);
        e[j] = 1.0;
        worst = worst.max((col - e).amax());
    }
    check("woodbury_inverse", worst < 1e-8, format!("max |C^-1 C - I| {worst:e}"))
}

fn mahalanobis_at_mean(rng: &mut ChaCha8Rng) -> Check {
    let w = gaussian(rng, 10, 2);
    let model = PpcaModel::new(DVector::from_fn(10, |i, _| i as f64), w, 0.3, 1.0, Default::default());
    let d = model
        .ok()
        .map(LatentModel::Ppca)
        .and_then(|m| crate::density::GaussianDensity::from_model(&m).ok().map(|g| (m, g)))
        .and_then(|(m, g)| g.mahalanobis_sq(m.mean()).ok());
    check("mahalanobis_at_mean", d == Some(0.0), format!("{d:?}"))
}

/// Run every check; a few seconds at most.
pub fn run_selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut out = vec![
        ffd_affinity(&mut rng),
        bernstein_partition(),
        ppca_matches_pca(&mut rng),
        woodbury(&mut rng),
        mahalanobis_at_mean(&mut rng),
    ];
    let vr = volume_ratio(2);
    out.push(check(
        "volume_ratio_d2",
        (vr - std::f64::consts::FRAC_PI_4).abs() < 1e-12,
        format!("{vr}"),
    ));
    let d: Vec<f64> = (1..=8).map(f64::from).collect();
    let t = threshold_from_distances(&d, ThresholdRule::TukeyFence, String::new());
    let phi = t.as_ref().map(|t| t.phi_max).unwrap_or(f64::NAN);
    out.push(check("iqr_threshold", (phi - 11.5).abs() < 1e-12, format!("phi_max {phi}")));
    let p = penalty_value(&[0.1], &PenaltySpec::default());
    out.push(check("penalty_value", (p - 150.0).abs() < 1e-12, format!("{p}")));
    let b = BoxBounds::unit(3);
    out.push(check("ccd_size", ccd_init(&b).len() == 7, format!("{}", ccd_init(&b).len())));
    let c = [1.0 / 3.0, 2.0 / 3.0];
    let mut f = |x: &[f64]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
    let r = direct_minimize(&mut f, &BoxBounds::unit(2), 200);
    let dist = r
        .as_ref()
        .map(|r| ((r.best_x[0] - c[0]).powi(2) + (r.best_x[1] - c[1]).powi(2)).sqrt())
        .unwrap_or(f64::INFINITY);
    out.push(check("direct_quadratic", dist < 0.02, format!("distance {dist:e}")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
