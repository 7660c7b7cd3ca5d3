//! Procedural hull-like half body used as the baseline geometry.
//!
//! Points are laid out station-major: station `i` (aft to fore along x) holds
//! `girth` points running from the keel (`theta = 0`) up to the waterline
//! (`theta = pi/2`). Only the starboard half (`y >= 0`) is generated.

use serde::{Deserialize, Serialize};

use super::ffd::{ActiveVariable, FfdLattice};
use super::Geometry;
use crate::error::{Error, Result};

/// Cylindrical sonar-dome region with its axis along x at `y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomeSpec {
    pub x_center: f64,
    pub length: f64,
    pub radius: f64,
    pub z_axis: f64,
}

impl DomeSpec {
    /// Half-width of the cylinder at height `z`, or `None` outside it.
    pub fn half_width(&self, x: f64, z: f64) -> Option<f64> {
        if (x - self.x_center).abs() > 0.5 * self.length {
            return None;
        }
        let dz = z - self.z_axis;
        (dz.abs() <= self.radius).then(|| (self.radius * self.radius - dz * dz).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HullParams {
    pub length: f64,
    pub beam: f64,
    pub draft: f64,
    pub stations: usize,
    pub girth_points: usize,
    /// Exponent of the waterline half-breadth curve `(1 - xi^2)^p`.
    pub fullness: f64,
    /// Radius of the bow bulb bump (0 disables it).
    pub bulb_radius: f64,
    pub waterline_z: f64,
    pub dome: DomeSpec,
}

impl Default for HullParams {
    fn default() -> Self {
        let length = 142.0;
        let draft = 6.16;
        Self {
            length,
            beam: 19.06,
            draft,
            stations: 60,
            girth_points: 16,
            fullness: 0.6,
            bulb_radius: 1.6,
            waterline_z: 0.0,
            dome: DomeSpec {
                x_center: 0.85 * length,
                length: 1.7,
                radius: 2.45,
                z_axis: -draft,
            },
        }
    }
}

/// Structured-grid shape of a hull geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullGrid {
    pub stations: usize,
    pub girth: usize,
}

impl HullGrid {
    pub fn index(&self, station: usize, girth: usize) -> usize {
        station * self.girth + girth
    }

    pub fn num_points(&self) -> usize {
        self.stations * self.girth
    }
}

impl HullParams {
    pub fn validate(&self) -> Result<()> {
        if self.stations < 3 || self.girth_points < 3 {
            return Err(Error::Config("hull needs at least 3 stations and 3 girth points".into()));
        }
        let dims = [self.length, self.beam, self.draft];
        if dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::Config("hull length, beam and draft must be positive".into()));
        }
        if !(self.fullness > 0.0) || self.bulb_radius < 0.0 {
            return Err(Error::Config("hull fullness must be > 0 and bulb radius >= 0".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> HullGrid {
        HullGrid {
            stations: self.stations,
            girth: self.girth_points,
        }
    }

    /// Waterline half-breadth at longitudinal position `x`.
    fn half_breadth(&self, x: f64) -> f64 {
        let xi = 2.0 * x / self.length - 1.0;
        0.5 * self.beam * (1.0 - xi * xi).max(0.0).powf(self.fullness)
    }

    pub fn generate(&self) -> Result<(Geometry, HullGrid)> {
        self.validate()?;
        let grid = self.grid();
        let mut coords = Vec::with_capacity(3 * grid.num_points());
        let bulb_x = 0.97 * self.length;
        let bulb_z = self.waterline_z - 0.6 * self.draft;
        for i in 0..self.stations {
            let x = self.length * i as f64 / (self.stations - 1) as f64;
            let b = self.half_breadth(x);
            for j in 0..self.girth_points {
                let theta = 0.5 * std::f64::consts::PI * j as f64 / (self.girth_points - 1) as f64;
                let z = self.waterline_z - self.draft * theta.cos();
                let mut y = b * theta.sin();
                if self.bulb_radius > 0.0 {
                    let sx = (x - bulb_x) / (2.5 * self.bulb_radius);
                    let sz = (z - bulb_z) / self.bulb_radius;
                    y += self.bulb_radius * (-sx * sx - sz * sz).exp() * theta.sin();
                }
                coords.extend_from_slice(&[x, y, z]);
            }
        }
        Ok((Geometry::new(coords)?, grid))
    }
}

fn var(node: [usize; 3], axis: usize, lower: f64, upper: f64) -> ActiveVariable {
    ActiveVariable {
        node,
        axis,
        lower,
        upper,
    }
}

/// Bulb and hull lattices with 6 + 15 active variables, scaled to `p`.
///
/// The bulb lattice comes first so points in its box belong to it. Its aft
/// face and the outer layers carry no active nodes, which keeps the deformed
/// surface continuous across the lattice boundary. Hull variables move only
/// in `y`; bulb variables move in all three directions.
pub fn desk_lattices(p: &HullParams) -> Vec<FfdLattice> {
    let (sx, sy, sz) = (p.length / 142.0, p.beam / 19.06, p.draft / 6.16);
    let keel = p.waterline_z - p.draft;
    let bulb = FfdLattice {
        origin: [127.2 * sx, 0.0, keel - 0.5 * sz],
        axes: [[18.0 * sx, 0.0, 0.0], [0.0, 3.5 * sy, 0.0], [0.0, 0.0, 4.5 * sz]],
        degrees: [3, 2, 2],
        active: vec![
            var([1, 1, 1], 1, -1.0, 1.0),
            var([2, 1, 1], 2, -1.0, 1.0),
            var([2, 1, 0], 0, -0.3, 0.3),
            var([3, 1, 1], 2, -1.0, 1.0),
            var([3, 1, 1], 0, 0.0, 0.5),
            var([3, 1, 1], 1, -1.0, 1.0),
        ],
    };
    let mut hull_vars = vec![var([0, 1, 2], 1, -1.0, 1.0)];
    for i in 1..=5 {
        hull_vars.push(var([i, 1, 1], 1, -1.0, 1.0));
        hull_vars.push(var([i, 1, 2], 1, -1.0, 1.0));
    }
    hull_vars.push(var([6, 1, 2], 1, -1.0, 1.0));
    hull_vars.push(var([6, 1, 1], 1, -2.0, 2.0));
    hull_vars.push(var([7, 1, 1], 1, -2.0, 2.0));
    hull_vars.push(var([8, 1, 1], 1, -2.0, 2.0));
    let hull = FfdLattice {
        origin: [0.0, 0.0, p.waterline_z - 7.0 * sz],
        axes: [[145.7 * sx, 0.0, 0.0], [0.0, 11.0 * sy, 0.0], [0.0, 0.0, 8.0 * sz]],
        degrees: [8, 2, 3],
        active: hull_vars,
    };
    vec![bulb, hull]
}
