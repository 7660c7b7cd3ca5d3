use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ffd::{deformation_matrix, FfdLattice};
use super::Geometry;
use crate::error::{Error, Result};

/// Width of the sliding window used to detect an infeasible design space.
pub const REJECTION_WINDOW: usize = 1000;
/// Minimum accepted draws per window (rejection rate above 99% is an error).
pub const MIN_ACCEPTED_PER_WINDOW: usize = REJECTION_WINDOW / 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub accepted: usize,
    pub attempts: usize,
}

impl SamplingStats {
    pub fn acceptance_ratio(&self) -> f64 {
        self.accepted as f64 / self.attempts.max(1) as f64
    }
}

/// Sampled geometries (rows of `x`) with the design vectors that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub designs: DMatrix<f64>,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub stats: SamplingStats,
}

impl Dataset {
    /// Wrap an existing data matrix (no sampling provenance).
    pub fn from_matrix(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: x.nrows(),
            });
        }
        let n = x.nrows();
        Ok(Self {
            x,
            designs: DMatrix::zeros(n, 0),
            seed: 0,
            bounds: Vec::new(),
            stats: SamplingStats {
                accepted: n,
                attempts: n,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.x.row(n).transpose()
    }
}

pub type Feasibility<'a> = &'a (dyn Fn(&Geometry) -> bool + Sync);

fn draw_design(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

/// Draw `n` designs uniformly within the lattice bounds and deform the baseline.
///
/// Row `r` uses its own ChaCha stream `(seed, r)`, so results do not depend on
/// thread scheduling. Designs rejected by `feasibility` are redrawn from the
/// same stream.
pub fn sample_dataset(
    baseline: &Geometry,
    lattices: &[FfdLattice],
    n: usize,
    seed: u64,
    feasibility: Option<Feasibility<'_>>,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let a = deformation_matrix(baseline, lattices)?;
    let bounds: Vec<(f64, f64)> = lattices.iter().flat_map(FfdLattice::bounds).collect();
    let g0 = baseline.to_vector();

    // Each row yields (design, geometry, number of rejections before acceptance).
    let rows: Vec<Option<(Vec<f64>, DVector<f64>, usize)>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            for rejected in 0..REJECTION_WINDOW {
                let v = draw_design(&mut rng, &bounds);
                let x = &g0 + &a * DVector::from_column_slice(&v);
                let ok = match feasibility {
                    None => true,
                    Some(pred) => Geometry::from_vector(&x).map(|g| pred(&g)).unwrap_or(false),
                };
                if ok {
                    return Some((v, x, rejected));
                }
            }
            None
        })
        .collect();

    // Replay the attempt sequence in row order for the sliding-window check.
    let mut window = std::collections::VecDeque::with_capacity(REJECTION_WINDOW);
    let mut accepted_in_window = 0usize;
    let mut attempts = 0usize;
    let mut push = |ok: bool, window: &mut std::collections::VecDeque<bool>| -> Result<()> {
        attempts += 1;
        window.push_back(ok);
        accepted_in_window += ok as usize;
        if window.len() > REJECTION_WINDOW {
            accepted_in_window -= window.pop_front().unwrap() as usize;
        }
        if window.len() == REJECTION_WINDOW && accepted_in_window < MIN_ACCEPTED_PER_WINDOW {
            return Err(Error::InfeasibleSpace {
                accepted: accepted_in_window,
                window: REJECTION_WINDOW,
            });
        }
        Ok(())
    };
    for row in &rows {
        match row {
            Some((_, _, rejected)) => {
                for _ in 0..*rejected {
                    push(false, &mut window)?;
                }
                push(true, &mut window)?;
            }
            None => {
                for _ in 0..REJECTION_WINDOW {
                    push(false, &mut window)?;
                }
            }
        }
    }

    let m = bounds.len();
    let mut x = DMatrix::zeros(n, baseline.dim());
    let mut designs = DMatrix::zeros(n, m);
    for (r, row) in rows.into_iter().enumerate() {
        let (v, g, _) = row.expect("rows without acceptance fail the window check");
        x.row_mut(r).copy_from(&g.transpose());
        designs.row_mut(r).copy_from_slice(&v);
    }
    Ok(Dataset {
        x,
        designs,
        seed,
        bounds,
        stats: SamplingStats { accepted: n, attempts },
    })
}
