//! Box-projected quasi-Newton search with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

#[derive(Debug, Clone)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn project(x: &mut DVector<f64>, lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Minimize `f` over `[lower, upper]` from `x0` given its gradient `grad`.
///
/// The backtracking line search calls only `f`; `grad` is evaluated once per
/// accepted step.
pub fn projected_bfgs(
    mut f: impl FnMut(&[f64]) -> f64,
    mut grad: impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
) -> LocalResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, lower, upper);
    let mut fx = f(x.as_slice());
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    if !fx.is_finite() {
        return LocalResult {
            x: x.as_slice().to_vec(),
            value: fx,
            iterations,
        };
    }
    let mut g = DVector::from_vec(grad(x.as_slice()));
    while iterations < max_iter {
        iterations += 1;
        // projected-gradient stationarity
        let mut pg = &x - &g;
        project(&mut pg, lower, upper);
        if (&pg - &x).amax() < 1e-10 {
            break;
        }
        let mut d = -(&h * &g);
        if g.dot(&d) >= 0.0 {
            h.fill_with_identity();
            d = -g.clone();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut xn = &x + &d * t;
            project(&mut xn, lower, upper);
            let step = &xn - &x;
            if step.amax() < 1e-14 {
                break;
            }
            let fn_ = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + ARMIJO_C * g.dot(&step) {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if h == DMatrix::identity(n, n) {
                break;
            }
            // retry once along the steepest descent
            h.fill_with_identity();
            continue;
        };
        let gn = DVector::from_vec(grad(xn.as_slice()));
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let improvement = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            h = &a * &h * a.transpose() + &s * s.transpose() * rho;
        }
        if improvement <= 1e-15 * fx.abs().max(1e-300) {
            break;
        }
    }
    LocalResult {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
    }
}

/// Central-difference gradient with per-coordinate step `h`.
pub fn fd_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let dn = f(&p);
            p[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let r = projected_bfgs(|x| rosenbrock(x).0, |x| rosenbrock(x).1, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], 500);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn active_bound() {
        // minimum of (x - 2)^2 + (y + 1)^2 on [0,1]^2 is (1, 0)
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2);
        let g = |x: &[f64]| vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 1.0)];
        let r = projected_bfgs(f, g, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], 100);
        assert_eq!(r.x, vec![1.0, 0.0]);
    }

    #[test]
    fn fd_matches_analytic() {
        let mut f = |x: &[f64]| rosenbrock(x).0;
        let x = [0.3, -0.7];
        let fd = fd_gradient(&mut f, &x, 1e-6);
        let g = rosenbrock(&x).1;
        for i in 0..2 {
            assert!((fd[i] - g[i]).abs() < 1e-5 * g[i].abs().max(1.0));
        }
    }
}
