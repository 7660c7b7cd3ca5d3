//! Bayesian optimization: GP surrogate plus lower-confidence-bound acquisition.
//!
//! The surrogate works in unit-cube coordinates so that a single isotropic
//! length scale is meaningful whatever the scale of each bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gp::{gp_fit_from, gp_with_hyperparameters, lcb, GpOptions};
use super::local::{fd_gradient, projected_bfgs};
use super::{BoxBounds, Objective, OptimResult, Tracker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoOptions {
    pub kappa: f64,
    /// Random acquisition starts; the incumbent is always added.
    pub starts: usize,
    pub local_iter: usize,
    /// Finite-difference step as a fraction of each bound range.
    pub fd_step: f64,
    pub seed: u64,
    /// Cap targets at this percentile before fitting (off when `None`).
    pub cap_percentile: Option<f64>,
    /// Re-optimize GP hyperparameters every this many evaluations; in between
    /// the surrogate is only reconditioned on the new data.
    pub refit_interval: usize,
    pub gp: GpOptions,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            starts: 16,
            local_iter: 200,
            fd_step: 1e-6,
            seed: 0,
            cap_percentile: None,
            refit_interval: 10,
            gp: GpOptions::default(),
        }
    }
}

/// Box center plus the two axial extremes of every dimension.
pub fn ccd_init(bounds: &BoxBounds) -> Vec<Vec<f64>> {
    let c = bounds.center();
    let mut pts = vec![c.clone()];
    for i in 0..bounds.dim() {
        for v in [bounds.lower[i], bounds.upper[i]] {
            let mut p = c.clone();
            p[i] = v;
            pts.push(p);
        }
    }
    pts
}

fn capped(targets: &[f64], pct: Option<f64>) -> Vec<f64> {
    let Some(p) = pct else {
        return targets.to_vec();
    };
    let mut s = targets.to_vec();
    s.sort_by(f64::total_cmp);
    let cap = crate::density::quantile_r7(&s, p / 100.0);
    targets.iter().map(|t| t.min(cap)).collect()
}

pub fn bo_minimize<O: Objective + ?Sized>(
    f: &mut O,
    bounds: &BoxBounds,
    budget: usize,
    opts: &BoOptions,
) -> Result<OptimResult> {
    let k = bounds.dim();
    let minimum = 2 * k + 2;
    if budget < minimum {
        return Err(Error::Budget { budget, minimum });
    }
    let unit = BoxBounds::unit(k);
    let mut tracker = Tracker::new(f, bounds, budget);
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut ys: Vec<f64> = Vec::with_capacity(budget);
    for p in ccd_init(&unit) {
        let y = tracker.eval_unit(&p).expect("budget covers the initial design");
        xs.push(p);
        ys.push(y);
    }
    let (lo, hi) = (vec![0.0; k], vec![1.0; k]);
    let mut step = 0u64;
    let mut hyper: Option<(f64, f64)> = None;
    let mut last_fit = 0usize;
    while !tracker.exhausted() {
        let targets = capped(&ys, opts.cap_percentile);
        let refit = hyper.is_none() || xs.len() >= last_fit + opts.refit_interval.max(1);
        let gp = match hyper {
            Some((ls, s2)) if !refit => gp_with_hyperparameters(&xs, &targets, ls, s2, &opts.gp)?,
            _ => {
                last_fit = xs.len();
                gp_fit_from(&xs, &targets, &opts.gp, hyper)?
            }
        };
        hyper = Some((gp.length_scale, gp.signal_variance));
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(step);
        step += 1;
        let mut starts: Vec<Vec<f64>> = (0..opts.starts)
            .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
            .collect();
        let incumbent = ys
            .iter()
            .enumerate()
            .fold(0, |b, (i, y)| if *y < ys[b] { i } else { b });
        starts.push(xs[incumbent].clone());

        let h = opts.fd_step;
        let found: Vec<(f64, Vec<f64>)> = starts
            .par_iter()
            .map(|s| {
                let acq = |u: &[f64]| lcb(&gp, u, opts.kappa);
                let r = projected_bfgs(
                    acq,
                    |u| fd_gradient(&mut { acq }, u, h),
                    s,
                    &lo,
                    &hi,
                    opts.local_iter,
                );
                (r.value, r.x)
            })
            .collect();
        // best value, ties to the lowest start index
        let best = found
            .iter()
            .fold(None, |acc: Option<&(f64, Vec<f64>)>, r| match acc {
                Some(b) if b.0 <= r.0 => Some(b),
                _ => Some(r),
            })
            .expect("at least one start");
        let mut u = best.1.clone();
        unit.clip(&mut u);
        let y = tracker.eval_unit(&u).expect("loop guard checks the budget");
        xs.push(u);
        ys.push(y);
    }
    Ok(OptimResult::from_log(tracker.log))
}
