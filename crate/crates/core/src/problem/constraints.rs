//! Geometric hidden constraints on a structured half-hull grid.

use serde::{Deserialize, Serialize};

use crate::geometry::{DomeSpec, Geometry, HullGrid};
use crate::optim::ConstraintFlag;

/// Violation reported when a measure is not finite.
pub const DEGENERATE_VIOLATION: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintTolerances {
    /// Allowed relative change of the beam.
    pub beam: f64,
    pub draft: f64,
    /// Relaxed equality on the length between perpendiculars.
    pub length: f64,
    /// Relaxed equality on the displacement.
    pub displacement: f64,
    /// Enforce `V >= V0` inside the dome cylinder.
    pub dome: bool,
    /// Sample counts `(x, z)` over the dome footprint.
    pub dome_samples: (usize, usize),
}

impl Default for ConstraintTolerances {
    fn default() -> Self {
        Self {
            beam: 0.05,
            draft: 0.05,
            length: 0.01,
            displacement: 0.01,
            dome: true,
            dome_samples: (16, 32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullMeasures {
    pub beam: f64,
    pub draft: f64,
    pub length: f64,
    pub displacement: f64,
    pub dome_volume: f64,
}

impl HullMeasures {
    fn finite(&self) -> bool {
        [self.beam, self.draft, self.length, self.displacement, self.dome_volume]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Panel corners `(i, j), (i+1, j), (i+1, j+1), (i, j+1)` of the grid.
fn panels(grid: &HullGrid) -> impl Iterator<Item = [usize; 4]> + '_ {
    (0..grid.stations - 1).flat_map(move |i| {
        (0..grid.girth - 1).map(move |j| {
            [
                grid.index(i, j),
                grid.index(i + 1, j),
                grid.index(i + 1, j + 1),
                grid.index(i, j + 1),
            ]
        })
    })
}

/// Measures of a symmetric hull whose starboard half is `x`.
pub fn hull_measures(x: &Geometry, grid: &HullGrid, waterline_z: f64, dome: &DomeSpec, samples: (usize, usize)) -> HullMeasures {
    let n = x.num_points();
    let (mut y_max, mut z_min) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in 0..n {
        let [px, py, pz] = x.point(p);
        y_max = y_max.max(py);
        z_min = z_min.min(pz);
        x_min = x_min.min(px);
        x_max = x_max.max(px);
    }
    // volume between the surface and the centreplane: sum of ybar * signed xz area
    let mut half_volume = 0.0;
    for q in panels(grid) {
        let c = q.map(|k| x.point(k));
        let ybar = 0.25 * c.iter().map(|p| p[1]).sum::<f64>();
        let mut area = 0.0;
        for a in 0..4 {
            let (p, r) = (c[a], c[(a + 1) % 4]);
            area += p[0] * r[2] - r[0] * p[2];
        }
        half_volume += ybar * 0.5 * area;
    }
    HullMeasures {
        beam: 2.0 * y_max,
        draft: waterline_z - z_min,
        length: x_max - x_min,
        displacement: 2.0 * half_volume.abs(),
        dome_volume: dome_volume(x, grid, dome, samples),
    }
}

/// Hull volume inside the dome cylinder, both sides.
pub fn dome_volume(x: &Geometry, grid: &HullGrid, dome: &DomeSpec, samples: (usize, usize)) -> f64 {
    let (nx, nz) = (samples.0.max(1), samples.1.max(1));
    let x0 = dome.x_center - 0.5 * dome.length;
    let z0 = dome.z_axis - dome.radius;
    let dx = dome.length / nx as f64;
    let dz = 2.0 * dome.radius / nz as f64;
    // triangles whose xz bounding box meets the footprint
    let mut tris: Vec<[[f64; 3]; 3]> = Vec::new();
    for q in panels(grid) {
        let c = q.map(|k| x.point(k));
        for t in [[c[0], c[1], c[2]], [c[0], c[2], c[3]]] {
            let (lo_x, hi_x) = (t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max));
            let (lo_z, hi_z) = (t.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min), t.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max));
            if hi_x >= x0 && lo_x <= x0 + dome.length && hi_z >= z0 && lo_z <= z0 + 2.0 * dome.radius {
                tris.push(t);
            }
        }
    }
    let mut vol = 0.0;
    for a in 0..nx {
        let sx = x0 + (a as f64 + 0.5) * dx;
        for b in 0..nz {
            let sz = z0 + (b as f64 + 0.5) * dz;
            let Some(hw) = dome.half_width(sx, sz) else {
                continue;
            };
            let yh = tris
                .iter()
                .filter_map(|t| interpolate_y(t, sx, sz))
                .fold(0.0, f64::max);
            vol += yh.min(hw) * dx * dz;
        }
    }
    2.0 * vol
}

/// Surface `y` at `(x, z)` if the xz projection of `t` contains it.
fn interpolate_y(t: &[[f64; 3]; 3], x: f64, z: f64) -> Option<f64> {
    let (a, b, c) = (t[0], t[1], t[2]);
    let det = (b[0] - a[0]) * (c[2] - a[2]) - (c[0] - a[0]) * (b[2] - a[2]);
    if det.abs() < 1e-14 {
        return None;
    }
    let l1 = ((x - a[0]) * (c[2] - a[2]) - (c[0] - a[0]) * (z - a[2])) / det;
    let l2 = ((b[0] - a[0]) * (z - a[2]) - (x - a[0]) * (b[2] - a[2])) / det;
    let l0 = 1.0 - l1 - l2;
    let eps = -1e-12;
    (l0 >= eps && l1 >= eps && l2 >= eps).then(|| l0 * a[1] + l1 * b[1] + l2 * c[1])
}

/// Constraint set relative to a baseline hull.
#[derive(Debug, Clone)]
pub struct HullConstraints {
    pub grid: HullGrid,
    pub waterline_z: f64,
    pub dome: DomeSpec,
    pub tolerances: ConstraintTolerances,
    pub baseline: HullMeasures,
}

pub const CONSTRAINT_NAMES: [&str; 5] = ["beam", "draft", "length", "displacement", "dome_volume"];

impl HullConstraints {
    pub fn new(baseline: &Geometry, grid: HullGrid, waterline_z: f64, dome: DomeSpec, tolerances: ConstraintTolerances) -> Self {
        let m = hull_measures(baseline, &grid, waterline_z, &dome, tolerances.dome_samples);
        Self {
            grid,
            waterline_z,
            dome,
            tolerances,
            baseline: m,
        }
    }

    pub fn measures(&self, x: &Geometry) -> HullMeasures {
        hull_measures(x, &self.grid, self.waterline_z, &self.dome, self.tolerances.dome_samples)
    }

    /// One flag per constraint, `max(0, g - a)` in the units of the measure.
    pub fn evaluate(&self, x: &Geometry) -> Vec<ConstraintFlag> {
        let m = self.measures(x);
        let b = &self.baseline;
        let t = &self.tolerances;
        let values = if m.finite() {
            [
                (m.beam - b.beam).abs() - t.beam * b.beam,
                (m.draft - b.draft).abs() - t.draft * b.draft,
                (m.length - b.length).abs() - t.length * b.length,
                (m.displacement - b.displacement).abs() - t.displacement * b.displacement,
                if t.dome { b.dome_volume - m.dome_volume } else { 0.0 },
            ]
        } else {
            [DEGENERATE_VIOLATION; 5]
        };
        CONSTRAINT_NAMES
            .iter()
            .zip(values)
            .map(|(name, v)| ConstraintFlag {
                name: (*name).into(),
                violation: v.max(0.0),
            })
            .collect()
    }
}

/// Violations of `x` against `baseline` under `tolerances`.
pub fn hull_constraints(
    x: &Geometry,
    baseline: &Geometry,
    grid: HullGrid,
    waterline_z: f64,
    dome: &DomeSpec,
    tolerances: &ConstraintTolerances,
) -> Vec<ConstraintFlag> {
    HullConstraints::new(baseline, grid, waterline_z, dome.clone(), tolerances.clone()).evaluate(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HullParams;

    fn setup() -> (Geometry, HullGrid, HullParams) {
        let p = HullParams::default();
        let (g, grid) = p.generate().unwrap();
        (g, grid, p)
    }

    fn scale_axis(g: &Geometry, axis: usize, s: f64) -> Geometry {
        let mut c = g.coords().to_vec();
        for p in 0..g.num_points() {
            c[3 * p + axis] *= s;
        }
        Geometry::new(c).unwrap()
    }

    fn violation(flags: &[ConstraintFlag], name: &str) -> f64 {
        flags.iter().find(|f| f.name == name).unwrap().violation
    }

    #[test]
    fn baseline_measures_are_sensible() {
        let (g, grid, p) = setup();
        let c = HullConstraints::new(&g, grid, p.waterline_z, p.dome.clone(), Default::default());
        let m = c.baseline;
        assert!((m.length - p.length).abs() < 1e-12);
        assert!((m.draft - p.draft).abs() < 1e-12);
        assert!((m.beam - p.beam).abs() < 0.05 * p.beam);
        // below the box L B T, above a third of it
        let boxv = p.length * p.beam * p.draft;
        assert!(m.displacement < boxv && m.displacement > boxv / 3.0, "{}", m.displacement);
        assert!(m.dome_volume > 0.0);
        assert!(c.evaluate(&g).iter().all(|f| f.violation == 0.0));
    }

    #[test]
    fn displacement_of_a_box_section() {
        // prism with rectangular sections: y = b, z from -t to 0
        let (ns, ng, l, b, t) = (5, 4, 10.0, 2.0, 3.0);
        let mut c = Vec::new();
        for i in 0..ns {
            for j in 0..ng {
                let x = l * i as f64 / (ns - 1) as f64;
                let z = -t + t * j as f64 / (ng - 1) as f64;
                c.extend_from_slice(&[x, b, z]);
            }
        }
        let g = Geometry::new(c).unwrap();
        let grid = HullGrid { stations: ns, girth: ng };
        let dome = DomeSpec {
            x_center: 5.0,
            length: 2.0,
            radius: 1.0,
            z_axis: -1.5,
        };
        let m = hull_measures(&g, &grid, 0.0, &dome, (20, 40));
        assert!((m.displacement - 2.0 * l * b * t).abs() < 1e-9);
        // dome cylinder fully inside the box: 2 * (pi r^2 / 2 ... ) both sides of radius 1 within y <= b
        let cyl = std::f64::consts::PI * dome.radius * dome.radius * dome.length;
        assert!((m.dome_volume - cyl).abs() < 0.02 * cyl, "{} vs {}", m.dome_volume, cyl);
    }

    #[test]
    fn beam_scaling_violation() {
        let (g, grid, p) = setup();
        let c = HullConstraints::new(&g, grid, p.waterline_z, p.dome.clone(), Default::default());
        let wide = scale_axis(&g, 1, 1.1);
        let flags = c.evaluate(&wide);
        let b0 = c.baseline.beam;
        assert!((violation(&flags, "beam") - 0.05 * b0).abs() < 1e-9);
        assert_eq!(violation(&flags, "draft"), 0.0);
        assert_eq!(violation(&flags, "length"), 0.0);
    }

    #[test]
    fn hollowed_dome_violates_volume() {
        let (g, grid, p) = setup();
        let c = HullConstraints::new(&g, grid, p.waterline_z, p.dome.clone(), Default::default());
        let mut coords = g.coords().to_vec();
        for k in 0..g.num_points() {
            let [x, _, z] = g.point(k);
            if (x - p.dome.x_center).abs() < 4.0 && z < p.dome.z_axis + p.dome.radius {
                coords[3 * k + 1] *= 0.3;
            }
        }
        let flags = c.evaluate(&Geometry::new(coords).unwrap());
        assert!(violation(&flags, "dome_volume") > 0.0);
    }

    #[test]
    fn degenerate_geometry_flagged() {
        let (g, grid, p) = setup();
        let c = HullConstraints::new(&g, grid, p.waterline_z, p.dome.clone(), Default::default());
        let mut coords = g.coords().to_vec();
        coords[4] = 1e308;
        coords[7] = -1e308;
        let flags = c.evaluate(&Geometry::new(coords).unwrap());
        assert!(flags.iter().any(|f| f.violation >= DEGENERATE_VIOLATION));
    }
}
