//! Gaussian-process surrogate with an isotropic Matern 3/2 kernel.
//!
//! Targets are standardized before fitting; the signal variance and nugget
//! below therefore live in standardized units and are rescaled on prediction.
//! Hyperparameters `(ln l, ln s2)` maximize the log marginal likelihood by
//! multi-start projected BFGS with the analytic gradient.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::local::projected_bfgs;
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpOptions {
    /// Starting nugget as a fraction of the (unit) standardized target variance.
    pub nugget: f64,
    /// Largest nugget tried before giving up.
    pub nugget_max: f64,
    /// Length-scale search range as multiples of the input box diagonal.
    pub length_scale_range: (f64, f64),
    /// Signal-variance search range as multiples of the target variance.
    pub signal_variance_range: (f64, f64),
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            nugget: 1e-8,
            nugget_max: 1e-2,
            length_scale_range: (1e-3, 10.0),
            signal_variance_range: (1e-6, 1e3),
            restarts: 8,
            max_iter: 100,
        }
    }
}

/// Matern 3/2 kernel `s2 (1 + sqrt3 r / l) exp(-sqrt3 r / l)`.
pub fn matern32(r: f64, length_scale: f64, signal_variance: f64) -> f64 {
    let a = SQRT3 * r / length_scale;
    signal_variance * (1.0 + a) * (-a).exp()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    inputs: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    pub length_scale: f64,
    /// Standardized units.
    pub signal_variance: f64,
    /// Standardized units.
    pub nugget: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub log_marginal_likelihood: f64,
}

/// Pairwise distances of the training inputs.
fn distance_matrix(x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| distance(&x[i], &x[j]))
}

fn kernel_matrix(r: &DMatrix<f64>, ls: f64, s2: f64, nugget: f64) -> DMatrix<f64> {
    let mut k = r.map(|d| matern32(d, ls, s2));
    for i in 0..k.nrows() {
        k[(i, i)] += nugget;
    }
    k
}

/// Log marginal likelihood of standardized targets `y`.
fn lml(r: &DMatrix<f64>, y: &DVector<f64>, ln_ls: f64, ln_s2: f64, nugget: f64) -> Option<f64> {
    let chol = Cholesky::new(kernel_matrix(r, ln_ls.exp(), ln_s2.exp(), nugget))?;
    let alpha = chol.solve(y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (y.dot(&alpha) + log_det + y.len() as f64 * LN_2PI))
}

/// Log marginal likelihood of standardized targets `y` and its gradient in `(ln l, ln s2)`.
pub fn lml_and_gradient(
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    ln_ls: f64,
    ln_s2: f64,
    nugget: f64,
) -> Option<(f64, [f64; 2])> {
    let (ls, s2) = (ln_ls.exp(), ln_s2.exp());
    let n = y.len();
    let k = kernel_matrix(r, ls, s2, nugget);
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * (y.dot(&alpha) + log_det + n as f64 * LN_2PI);
    // d/dtheta = 1/2 tr((alpha alpha^T - K^-1) dK)
    let k_inv = chol.inverse();
    let mut g = [0.0; 2];
    for i in 0..n {
        for j in 0..n {
            let a = SQRT3 * r[(i, j)] / ls;
            let e = (-a).exp();
            let dk_ls = s2 * a * a * e;
            let dk_s2 = s2 * (1.0 + a) * e;
            let m = alpha[i] * alpha[j] - k_inv[(i, j)];
            g[0] += m * dk_ls;
            g[1] += m * dk_s2;
        }
    }
    Some((lml, [0.5 * g[0], 0.5 * g[1]]))
}

/// Targets standardized to zero mean and unit variance, with the scale used.
fn standardize(targets: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = targets.len();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|t| (t - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y = DVector::from_iterator(n, targets.iter().map(|t| (t - y_mean) / y_scale));
    (y_mean, y_scale, y)
}

fn check_inputs(inputs: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    let n = inputs.len();
    if n != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    let distinct = inputs.iter().any(|x| distance(x, &inputs[0]) > 0.0);
    if n < 2 || !distinct {
        return Err(Error::InsufficientData { needed: 2, got: usize::from(n > 0) });
    }
    Ok(())
}

fn not_positive_definite(opts: &GpOptions) -> Error {
    Error::Numerical {
        iteration: 0,
        reason: format!("kernel matrix not positive definite up to nugget {}", opts.nugget_max),
    }
}

/// Fit hyperparameters by maximum marginal likelihood.
pub fn gp_fit(inputs: &[Vec<f64>], targets: &[f64], opts: &GpOptions) -> Result<GpSurrogate> {
    gp_fit_from(inputs, targets, opts, None)
}

/// As [`gp_fit`], adding `(length_scale, signal_variance)` as one more start.
pub fn gp_fit_from(
    inputs: &[Vec<f64>],
    targets: &[f64],
    opts: &GpOptions,
    init: Option<(f64, f64)>,
) -> Result<GpSurrogate> {
    check_inputs(inputs, targets)?;
    let (y_mean, y_scale, y) = standardize(targets);

    let dim = inputs[0].len();
    let diag = (0..dim)
        .map(|c| {
            let lo = inputs.iter().map(|x| x[c]).fold(f64::INFINITY, f64::min);
            let hi = inputs.iter().map(|x| x[c]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let lower = [
        (opts.length_scale_range.0 * diag).ln(),
        opts.signal_variance_range.0.ln(),
    ];
    let upper = [
        (opts.length_scale_range.1 * diag).ln(),
        opts.signal_variance_range.1.ln(),
    ];
    let r = distance_matrix(inputs);

    let mut nugget = opts.nugget;
    while nugget <= opts.nugget_max * (1.0 + 1e-12) {
        let mut starts: Vec<[f64; 2]> = (0..opts.restarts.max(1))
            .map(|s| {
                // spread starts over the interior of the length-scale range
                let t = (s as f64 + 0.5) / opts.restarts.max(1) as f64;
                [lower[0] + t * (upper[0] - lower[0]), 0.0f64.clamp(lower[1], upper[1])]
            })
            .collect();
        if let Some((ls, s2)) = init {
            starts.push([ls.ln().clamp(lower[0], upper[0]), s2.ln().clamp(lower[1], upper[1])]);
        }
        let results: Vec<(f64, [f64; 2])> = starts
            .par_iter()
            .map(|s| {
                let res = projected_bfgs(
                    |p| lml(&r, &y, p[0], p[1], nugget).map_or(f64::INFINITY, |l| -l),
                    |p| match lml_and_gradient(&r, &y, p[0], p[1], nugget) {
                        Some((_, g)) => vec![-g[0], -g[1]],
                        None => vec![0.0, 0.0],
                    },
                    s,
                    &lower,
                    &upper,
                    opts.max_iter,
                );
                (res.value, [res.x[0], res.x[1]])
            })
            .collect();
        let best = results
            .iter()
            .filter(|r| r.0.is_finite())
            .fold(None, |acc: Option<&(f64, [f64; 2])>, r| match acc {
                Some(b) if b.0 <= r.0 => Some(b),
                _ => Some(r),
            });
        if let Some(&(_, [ln_ls, ln_s2])) = best {
            if let Some(gp) = condition(inputs, &r, y_mean, y_scale, &y, ln_ls.exp(), ln_s2.exp(), nugget) {
                return Ok(gp);
            }
        }
        nugget *= 10.0;
    }
    Err(not_positive_definite(opts))
}

/// Condition on the data with fixed hyperparameters (nugget still escalates).
pub fn gp_with_hyperparameters(
    inputs: &[Vec<f64>],
    targets: &[f64],
    length_scale: f64,
    signal_variance: f64,
    opts: &GpOptions,
) -> Result<GpSurrogate> {
    check_inputs(inputs, targets)?;
    let (y_mean, y_scale, y) = standardize(targets);
    let r = distance_matrix(inputs);
    let mut nugget = opts.nugget;
    while nugget <= opts.nugget_max * (1.0 + 1e-12) {
        if let Some(gp) = condition(inputs, &r, y_mean, y_scale, &y, length_scale, signal_variance, nugget) {
            return Ok(gp);
        }
        nugget *= 10.0;
    }
    Err(not_positive_definite(opts))
}

#[allow(clippy::too_many_arguments)]
fn condition(
    inputs: &[Vec<f64>],
    r: &DMatrix<f64>,
    y_mean: f64,
    y_scale: f64,
    y: &DVector<f64>,
    ls: f64,
    s2: f64,
    nugget: f64,
) -> Option<GpSurrogate> {
    let chol = Cholesky::new(kernel_matrix(r, ls, s2, nugget))?;
    let alpha = chol.solve(y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * (y.dot(&alpha) + log_det + y.len() as f64 * LN_2PI);
    Some(GpSurrogate {
        inputs: inputs.to_vec(),
        y_mean,
        y_scale,
        length_scale: ls,
        signal_variance: s2,
        nugget,
        chol,
        alpha,
        log_marginal_likelihood: lml,
    })
}

impl GpSurrogate {
    pub fn num_points(&self) -> usize {
        self.inputs.len()
    }

    /// Signal variance in target units.
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance * self.y_scale * self.y_scale
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|xi| matern32(distance(x, xi), self.length_scale, self.signal_variance)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.signal_variance - v.norm_squared()).max(0.0);
        (
            self.y_mean + self.y_scale * mean,
            var * self.y_scale * self.y_scale,
        )
    }
}

/// Lower confidence bound `mean - kappa sd`.
pub fn lcb(gp: &GpSurrogate, x: &[f64], kappa: f64) -> f64 {
    let (m, v) = gp.predict(x);
    m - kappa * v.sqrt()
}
