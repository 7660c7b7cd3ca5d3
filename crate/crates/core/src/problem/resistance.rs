//! Synthetic calm-water resistance standing in for a flow solver.
//!
//! `R(x) = ws S/S0 + wc C/C0 + wq |p - p*|^2 + wo/10 sum_k (1 - cos(omega (p_k - p*_k)))`
//! where `S` is the wetted surface, `C` the squared second differences along
//! each grid line running bow to stern, and `p = P (x - x0) / s` a fixed random
//! 10-dimensional projection. The planted target `p*` is the projection of a
//! design drawn from a fixed seed, scaled so that `|p0 - p*| = 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, HullGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistanceSpec {
    /// Seed of the projection and the planted target; part of the problem identity.
    pub seed: u64,
    pub version: u32,
    pub projection_dim: usize,
    pub w_surface: f64,
    pub w_curvature: f64,
    pub w_quadratic: f64,
    pub w_oscillation: f64,
    pub omega: f64,
    /// Target design drawn from this fraction of each variable range around its center.
    pub target_fraction: f64,
}

impl Default for ResistanceSpec {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            version: 1,
            projection_dim: 10,
            w_surface: 0.3,
            w_curvature: 0.05,
            w_quadratic: 0.5,
            w_oscillation: 0.2,
            omega: 3.0,
            target_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticResistance {
    pub spec: ResistanceSpec,
    grid: HullGrid,
    x0: DVector<f64>,
    projection: DMatrix<f64>,
    target: DVector<f64>,
    /// Design vector that produced the target.
    pub target_design: Vec<f64>,
    s0: f64,
    c0: f64,
}

fn tri_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Wetted surface of both sides of the hull.
pub fn wetted_surface(x: &[f64], grid: &HullGrid) -> f64 {
    let p = |k: usize| [x[3 * k], x[3 * k + 1], x[3 * k + 2]];
    let mut s = 0.0;
    for i in 0..grid.stations - 1 {
        for j in 0..grid.girth - 1 {
            let a = p(grid.index(i, j));
            let b = p(grid.index(i + 1, j));
            let c = p(grid.index(i + 1, j + 1));
            let d = p(grid.index(i, j + 1));
            s += tri_area(a, b, c) + tri_area(a, c, d);
        }
    }
    2.0 * s
}

/// Sum of squared second differences along every longitudinal grid line.
pub fn longitudinal_curvature(x: &[f64], grid: &HullGrid) -> f64 {
    let mut c = 0.0;
    for j in 0..grid.girth {
        for i in 1..grid.stations - 1 {
            let (a, b, d) = (grid.index(i - 1, j), grid.index(i, j), grid.index(i + 1, j));
            for ax in 0..3 {
                let s = x[3 * a + ax] - 2.0 * x[3 * b + ax] + x[3 * d + ax];
                c += s * s;
            }
        }
    }
    c
}

impl SyntheticResistance {
    /// Build the objective around `baseline`; `deform` maps a design vector to a geometry.
    pub fn new(
        spec: ResistanceSpec,
        baseline: &Geometry,
        grid: HullGrid,
        bounds: &[(f64, f64)],
        deform: impl Fn(&[f64]) -> Result<Geometry>,
    ) -> Result<Self> {
        if spec.projection_dim == 0 {
            return Err(Error::Config("resistance projection_dim must be positive".into()));
        }
        if baseline.num_points() != grid.num_points() {
            return Err(Error::DimensionMismatch {
                expected: 3 * grid.num_points(),
                got: baseline.dim(),
            });
        }
        let d = baseline.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(u64::from(spec.version));
        let scale = 1.0 / (d as f64).sqrt();
        let projection = DMatrix::from_fn(spec.projection_dim, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let target_design: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let u: f64 = rng.random_range(-0.5..0.5);
                c + spec.target_fraction * u * (hi - lo)
            })
            .collect();
        let x0 = baseline.to_vector();
        let xt = deform(&target_design)?.to_vector();
        let raw = &projection * (&xt - &x0);
        let s = raw.norm();
        if !(s > 0.0) {
            return Err(Error::Config("planted target coincides with the baseline".into()));
        }
        let s0 = wetted_surface(baseline.coords(), &grid);
        let c0 = longitudinal_curvature(baseline.coords(), &grid).max(f64::MIN_POSITIVE);
        Ok(Self {
            spec,
            grid,
            projection: projection / s,
            target: raw / s,
            target_design,
            x0,
            s0,
            c0,
        })
    }

    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        let dx = DVector::from_column_slice(x) - &self.x0;
        &self.projection * dx
    }

    /// Quadratic part only; zero at the planted target.
    pub fn quadratic_part(&self, x: &[f64]) -> f64 {
        self.spec.w_quadratic * (self.project(x) - &self.target).norm_squared()
    }

    pub fn value(&self, x: &Geometry) -> f64 {
        self.value_coords(x.coords())
    }

    pub fn value_coords(&self, x: &[f64]) -> f64 {
        let sp = &self.spec;
        let p = self.project(x);
        let diff = &p - &self.target;
        let osc: f64 = diff.iter().map(|e| 1.0 - (sp.omega * e).cos()).sum::<f64>() / sp.projection_dim as f64;
        sp.w_surface * wetted_surface(x, &self.grid) / self.s0
            + sp.w_curvature * longitudinal_curvature(x, &self.grid) / self.c0
            + sp.w_quadratic * diff.norm_squared()
            + sp.w_oscillation * osc
    }
}
