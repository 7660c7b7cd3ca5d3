//! DIRECT (dividing rectangles) on the unit hypercube.
//!
//! Rectangles are stored by center and per-axis trisection level, so side
//! lengths are exactly `3^-level` and equal-size groups are found by comparing
//! sorted level vectors rather than floating-point diameters.

use std::collections::BTreeMap;

use super::{BoxBounds, Objective, OptimResult, Tracker};
use crate::error::{Error, Result};

/// Relative improvement required of a potentially optimal rectangle.
pub const DIRECT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone)]
struct Rect {
    center: Vec<f64>,
    levels: Vec<u32>,
    f: f64,
}

impl Rect {
    fn side(&self, i: usize) -> f64 {
        3f64.powi(-(self.levels[i] as i32))
    }

    /// Half the diagonal length.
    fn size(&self) -> f64 {
        0.5 * (0..self.levels.len())
            .map(|i| self.side(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn size_key(&self) -> Vec<u32> {
        let mut k = self.levels.clone();
        k.sort_unstable();
        k
    }
}

/// Minimize `f` over `bounds` with exactly `budget` evaluations.
pub fn direct_minimize<O: Objective + ?Sized>(
    f: &mut O,
    bounds: &BoxBounds,
    budget: usize,
) -> Result<OptimResult> {
    if budget == 0 {
        return Err(Error::Budget { budget, minimum: 1 });
    }
    let k = bounds.dim();
    let mut tracker = Tracker::new(f, bounds, budget);
    let c0 = vec![0.5; k];
    let f0 = tracker.eval_unit(&c0).expect("budget >= 1");
    let mut rects = vec![Rect {
        center: c0,
        levels: vec![0; k],
        f: f0,
    }];

    while !tracker.exhausted() {
        let selected = potentially_optimal(&rects);
        for idx in selected {
            if !divide(&mut rects, idx, &mut tracker) {
                break;
            }
        }
    }
    Ok(OptimResult::from_log(tracker.log))
}

/// Indices of potentially optimal rectangles, ordered by size then index.
fn potentially_optimal(rects: &[Rect]) -> Vec<usize> {
    // best rectangle of every size class (ties: lowest index)
    let mut groups: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        groups
            .entry(r.size_key())
            .and_modify(|b| {
                if r.f < rects[*b].f {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let mut cand: Vec<(f64, f64, usize)> = groups.values().map(|&i| (rects[i].size(), rects[i].f, i)).collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let f_min = rects.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
    let target = f_min - DIRECT_EPSILON * f_min.abs();

    let mut out = Vec::new();
    for (j, &(dj, fj, idx)) in cand.iter().enumerate() {
        let mut k_low: f64 = 0.0;
        let mut k_high = f64::INFINITY;
        let mut dominated = false;
        for (i, &(di, fi, _)) in cand.iter().enumerate() {
            if i == j {
                continue;
            }
            if di < dj {
                k_low = k_low.max((fj - fi) / (dj - di));
            } else if di > dj {
                k_high = k_high.min((fi - fj) / (di - dj));
            } else if fi < fj {
                dominated = true;
            }
        }
        if dominated || k_low > k_high || k_high <= 0.0 {
            continue;
        }
        // the largest rectangle always qualifies through an arbitrarily large slope
        if k_high.is_finite() && fj - k_high * dj > target {
            continue;
        }
        out.push(idx);
    }
    out
}

/// Trisect rectangle `idx` along its longest sides. Returns false when the budget ran out.
fn divide<O: Objective + ?Sized>(rects: &mut Vec<Rect>, idx: usize, tracker: &mut Tracker<'_, O>) -> bool {
    let parent = rects[idx].clone();
    let min_level = *parent.levels.iter().min().unwrap();
    let dims: Vec<usize> = (0..parent.levels.len())
        .filter(|&i| parent.levels[i] == min_level)
        .collect();
    let delta = parent.side(dims[0]) / 3.0;

    let mut probes = Vec::with_capacity(dims.len());
    for &i in &dims {
        let mut lo = parent.center.clone();
        lo[i] -= delta;
        let mut hi = parent.center.clone();
        hi[i] += delta;
        let Some(f_lo) = tracker.eval_unit(&lo) else {
            return false;
        };
        let Some(f_hi) = tracker.eval_unit(&hi) else {
            // the lower probe was spent; keep it as a rectangle so nothing is lost
            let mut levels = parent.levels.clone();
            levels[i] += 1;
            rects.push(Rect { center: lo, levels, f: f_lo });
            return false;
        };
        probes.push((i, f_lo.min(f_hi), lo, f_lo, hi, f_hi));
    }
    // split the best dimension first so its children get the largest boxes
    probes.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut levels = parent.levels.clone();
    for (i, _, lo, f_lo, hi, f_hi) in probes {
        levels[i] += 1;
        rects.push(Rect {
            center: lo,
            levels: levels.clone(),
            f: f_lo,
        });
        rects.push(Rect {
            center: hi,
            levels: levels.clone(),
            f: f_hi,
        });
    }
    rects[idx].levels = levels;
    true
}
