//! Free-form deformation over trivariate Bernstein lattices.
//!
//! A lattice is a parallelepiped spanned by three edge vectors from an origin.
//! Control points sit on a regular `(t1+1) x (t2+1) x (t3+1)` grid in local
//! coordinates; a subset of their Cartesian components are design variables.
//! Because the Bernstein interpolation is linear in the control-point offsets,
//! the deformed geometry is affine in the design vector and can be written as
//! `g0 + A v` (see [`deformation_matrix`]).

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::Geometry;
use crate::error::{Error, Result};

/// Local coordinates within this distance outside `[0, 1]` are clamped onto the face.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// One active degree of freedom: control point `node` moved along Cartesian `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveVariable {
    pub node: [usize; 3],
    /// 0 = x, 1 = y, 2 = z.
    pub axis: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfdLattice {
    pub origin: [f64; 3],
    pub axes: [[f64; 3]; 3],
    /// Bernstein degree per axis; the lattice has `degree + 1` nodes along each.
    pub degrees: [usize; 3],
    pub active: Vec<ActiveVariable>,
}

/// How points that fall in no lattice are treated by [`Embedding::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsidePolicy {
    /// Points outside every lattice are left fixed.
    #[default]
    PassThrough,
    /// Any point outside every lattice is an error.
    Error,
}

impl FfdLattice {
    fn origin_v(&self) -> Vector3<f64> {
        Vector3::from(self.origin)
    }

    fn axis(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.axes[i])
    }

    /// Scalar triple product `T1 . (T2 x T3)`.
    pub fn triple_product(&self) -> f64 {
        self.axis(0).dot(&self.axis(1).cross(&self.axis(2)))
    }

    pub fn num_variables(&self) -> usize {
        self.active.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.degrees.iter().map(|d| d + 1).product()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.active.iter().map(|a| (a.lower, a.upper)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let scale: f64 = (0..3).map(|i| self.axis(i).norm()).product();
        let triple = self.triple_product();
        if !triple.is_finite() || triple.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidLattice(format!(
                "axes are linearly dependent (triple product {triple:e})"
            )));
        }
        if self.degrees.iter().any(|&d| d == 0) {
            return Err(Error::InvalidLattice("every degree must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (m, a) in self.active.iter().enumerate() {
            if a.axis > 2 {
                return Err(Error::InvalidLattice(format!("variable {m}: axis {} > 2", a.axis)));
            }
            if (0..3).any(|d| a.node[d] > self.degrees[d]) {
                return Err(Error::InvalidLattice(format!(
                    "variable {m}: node {:?} outside lattice of degrees {:?}",
                    a.node, self.degrees
                )));
            }
            if !(a.lower < a.upper) {
                return Err(Error::InvalidLattice(format!(
                    "variable {m}: lower {} must be < upper {}",
                    a.lower, a.upper
                )));
            }
            if !seen.insert((a.node, a.axis)) {
                return Err(Error::InvalidLattice(format!(
                    "variable {m}: node {:?} axis {} is already active",
                    a.node, a.axis
                )));
            }
        }
        Ok(())
    }

    /// Reference position of node `(i, j, k)` before perturbation.
    pub fn node_position(&self, node: [usize; 3]) -> Vector3<f64> {
        let mut p = self.origin_v();
        for d in 0..3 {
            p += self.axis(d) * (node[d] as f64 / self.degrees[d] as f64);
        }
        p
    }

    fn node_index(&self, node: [usize; 3]) -> usize {
        let [_, n2, n3] = self.degrees.map(|d| d + 1);
        (node[0] * n2 + node[1]) * n3 + node[2]
    }

    /// Bernstein tensor weight of `node` at local coordinates `abc`.
    pub fn weight(&self, node: [usize; 3], abc: [f64; 3]) -> f64 {
        (0..3)
            .map(|d| bernstein_unchecked(node[d], self.degrees[d], abc[d]))
            .product()
    }
}

/// Local lattice coordinates `(alpha, beta, gamma)` with `r = r0 + alpha T1 + beta T2 + gamma T3`.
pub fn local_coords(point: [f64; 3], lattice: &FfdLattice) -> Result<[f64; 3]> {
    let t = [lattice.axis(0), lattice.axis(1), lattice.axis(2)];
    let triple = lattice.triple_product();
    let scale = t[0].norm() * t[1].norm() * t[2].norm();
    if !triple.is_finite() || triple.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidLattice(format!(
            "axes are linearly dependent (triple product {triple:e})"
        )));
    }
    let rel = Vector3::from(point) - lattice.origin_v();
    // Cramer's rule; each denominator is the same triple product up to sign.
    let alpha = t[1].cross(&t[2]).dot(&rel) / t[1].cross(&t[2]).dot(&t[0]);
    let beta = t[0].cross(&t[2]).dot(&rel) / t[0].cross(&t[2]).dot(&t[1]);
    let gamma = t[0].cross(&t[1]).dot(&rel) / t[0].cross(&t[1]).dot(&t[2]);
    Ok([alpha, beta, gamma])
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn bernstein_unchecked(v: usize, r: usize, chi: f64) -> f64 {
    binomial(r, v) * chi.powi(v as i32) * (1.0 - chi).powi((r - v) as i32)
}

/// Bernstein basis polynomial `C(r, v) chi^v (1 - chi)^(r - v)`.
pub fn bernstein(v: usize, r: usize, chi: f64) -> Result<f64> {
    if v > r {
        return Err(Error::Domain(format!("Bernstein index {v} exceeds degree {r}")));
    }
    Ok(bernstein_unchecked(v, r, chi))
}

fn check_design(lattices: &[FfdLattice], v: &[f64]) -> Result<()> {
    let m: usize = lattices.iter().map(FfdLattice::num_variables).sum();
    if v.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: v.len(),
        });
    }
    Ok(())
}

/// Perturbed control-point positions of one lattice, in node order `(i, j, k)` row-major.
pub fn displace_control_points(lattice: &FfdLattice, v: &[f64]) -> Result<Vec<[f64; 3]>> {
    if v.len() != lattice.num_variables() {
        return Err(Error::DimensionMismatch {
            expected: lattice.num_variables(),
            got: v.len(),
        });
    }
    let [n1, n2, n3] = lattice.degrees.map(|d| d + 1);
    let mut nodes: Vec<[f64; 3]> = Vec::with_capacity(n1 * n2 * n3);
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                nodes.push(lattice.node_position([i, j, k]).into());
            }
        }
    }
    for (a, &value) in lattice.active.iter().zip(v) {
        nodes[lattice.node_index(a.node)][a.axis] += value;
    }
    Ok(nodes)
}

/// Assignment of every geometry point to its owning lattice, with local coordinates.
#[derive(Debug, Clone)]
pub struct Embedding {
    owners: Vec<Option<(usize, [f64; 3])>>,
}

impl Embedding {
    pub fn new(baseline: &Geometry, lattices: &[FfdLattice], policy: OutsidePolicy) -> Result<Self> {
        for l in lattices {
            l.validate()?;
        }
        let mut owners = Vec::with_capacity(baseline.num_points());
        for p in 0..baseline.num_points() {
            let point = baseline.point(p);
            let mut owner = None;
            for (li, lattice) in lattices.iter().enumerate() {
                let c = local_coords(point, lattice)?;
                let inside = c
                    .iter()
                    .all(|&x| (-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&x));
                if inside {
                    owner = Some((li, c.map(|x| x.clamp(0.0, 1.0))));
                    break;
                }
            }
            if owner.is_none() && policy == OutsidePolicy::Error {
                let coords = match lattices.first() {
                    Some(l) => local_coords(point, l)?,
                    None => [f64::NAN; 3],
                };
                return Err(Error::OutOfLattice {
                    point: p,
                    lattice: 0,
                    coords,
                });
            }
            owners.push(owner);
        }
        Ok(Self { owners })
    }

    pub fn owner(&self, point: usize) -> Option<(usize, [f64; 3])> {
        self.owners[point]
    }

    pub fn num_embedded(&self) -> usize {
        self.owners.iter().filter(|o| o.is_some()).count()
    }
}

/// Deformed geometry `g0 + sum_ijk B_ijk(alpha, beta, gamma) dc_ijk`, evaluated node by node.
pub fn deform(baseline: &Geometry, lattices: &[FfdLattice], v: &[f64]) -> Result<Geometry> {
    let embedding = Embedding::new(baseline, lattices, OutsidePolicy::PassThrough)?;
    deform_embedded(baseline, lattices, &embedding, v)
}

pub fn deform_embedded(
    baseline: &Geometry,
    lattices: &[FfdLattice],
    embedding: &Embedding,
    v: &[f64],
) -> Result<Geometry> {
    check_design(lattices, v)?;
    // Node offsets dc_ijk = c_ijk(v) - c_ijk(0), per lattice.
    let mut offsets = Vec::with_capacity(lattices.len());
    let mut start = 0;
    for lattice in lattices {
        let m = lattice.num_variables();
        let moved = displace_control_points(lattice, &v[start..start + m])?;
        let rest = displace_control_points(lattice, &vec![0.0; m])?;
        let delta: Vec<[f64; 3]> = moved
            .iter()
            .zip(&rest)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect();
        offsets.push(delta);
        start += m;
    }
    let mut coords = baseline.coords().to_vec();
    for p in 0..baseline.num_points() {
        let Some((li, abc)) = embedding.owner(p) else {
            continue;
        };
        let lattice = &lattices[li];
        let [n1, n2, n3] = lattice.degrees.map(|d| d + 1);
        let mut disp = [0.0; 3];
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    let dc = offsets[li][lattice.node_index([i, j, k])];
                    if dc == [0.0; 3] {
                        continue;
                    }
                    let w = lattice.weight([i, j, k], abc);
                    for d in 0..3 {
                        disp[d] += w * dc[d];
                    }
                }
            }
        }
        for d in 0..3 {
            coords[3 * p + d] += disp[d];
        }
    }
    Geometry::new(coords)
}

/// `D x M` matrix `A` with `deform(g0, lattices, v) = g0 + A v`.
pub fn deformation_matrix(baseline: &Geometry, lattices: &[FfdLattice]) -> Result<DMatrix<f64>> {
    let embedding = Embedding::new(baseline, lattices, OutsidePolicy::PassThrough)?;
    Ok(deformation_matrix_embedded(baseline, lattices, &embedding))
}

pub fn deformation_matrix_embedded(
    baseline: &Geometry,
    lattices: &[FfdLattice],
    embedding: &Embedding,
) -> DMatrix<f64> {
    let offsets: Vec<usize> = lattices
        .iter()
        .scan(0, |acc, l| {
            let s = *acc;
            *acc += l.num_variables();
            Some(s)
        })
        .collect();
    let m: usize = lattices.iter().map(FfdLattice::num_variables).sum();
    let mut a = DMatrix::zeros(baseline.dim(), m);
    for p in 0..baseline.num_points() {
        let Some((li, abc)) = embedding.owner(p) else {
            continue;
        };
        let lattice = &lattices[li];
        for (local, var) in lattice.active.iter().enumerate() {
            a[(3 * p + var.axis, offsets[li] + local)] = lattice.weight(var.node, abc);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_lattice(degrees: [usize; 3], active: Vec<ActiveVariable>) -> FfdLattice {
        FfdLattice {
            origin: [0.0; 3],
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            degrees,
            active,
        }
    }

    fn skew_lattice() -> FfdLattice {
        FfdLattice {
            origin: [0.3, -1.0, 2.0],
            axes: [[2.0, 0.1, 0.0], [0.3, 1.5, -0.2], [0.0, 0.4, 0.8]],
            degrees: [3, 2, 4],
            active: vec![],
        }
    }

    fn var(node: [usize; 3], axis: usize) -> ActiveVariable {
        ActiveVariable {
            node,
            axis,
            lower: -1.0,
            upper: 1.0,
        }
    }

    #[test]
    fn origin_and_axis_endpoint() {
        let l = skew_lattice();
        assert_eq!(local_coords(l.origin, &l).unwrap(), [0.0, 0.0, 0.0]);
        let p = [
            l.origin[0] + l.axes[0][0],
            l.origin[1] + l.axes[0][1],
            l.origin[2] + l.axes[0][2],
        ];
        let c = local_coords(p, &l).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15 && c[1].abs() < 1e-15 && c[2].abs() < 1e-15);
    }

    #[test]
    fn local_coords_round_trip() {
        let l = skew_lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let abc: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            // Forward map evaluated directly.
            let mut r = [0.0; 3];
            for d in 0..3 {
                r[d] = l.origin[d] + (0..3).map(|a| abc[a] * l.axes[a][d]).sum::<f64>();
            }
            let c = local_coords(r, &l).unwrap();
            let mut back = [0.0; 3];
            for d in 0..3 {
                back[d] = l.origin[d] + (0..3).map(|a| c[a] * l.axes[a][d]).sum::<f64>();
            }
            for d in 0..3 {
                assert!((back[d] - r[d]).abs() < 1e-12);
                assert!((c[d] - abc[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_lattice_is_rejected() {
        let mut l = skew_lattice();
        l.axes[2] = [l.axes[0][0] + l.axes[1][0], l.axes[0][1] + l.axes[1][1], l.axes[0][2] + l.axes[1][2]];
        assert!(matches!(local_coords([0.0; 3], &l), Err(Error::InvalidLattice(_))));
        assert!(l.validate().is_err());
    }

    #[test]
    fn bernstein_values() {
        assert_eq!(bernstein(0, 2, 0.0).unwrap(), 1.0);
        assert_eq!(bernstein(1, 2, 0.5).unwrap(), 0.5);
        let s: f64 = (0..=5).map(|v| bernstein(v, 5, 0.37).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(matches!(bernstein(3, 2, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn control_point_displacement() {
        let l = unit_lattice([2, 2, 2], vec![var([0, 0, 0], 1), var([1, 2, 1], 0)]);
        let rest = displace_control_points(&l, &[0.0, 0.0]).unwrap();
        assert_eq!(rest.len(), 27);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let p = rest[(i * 3 + j) * 3 + k];
                    assert_eq!(p, [i as f64 / 2.0, j as f64 / 2.0, k as f64 / 2.0]);
                }
            }
        }
        let moved = displace_control_points(&l, &[0.25, 0.0]).unwrap();
        assert_eq!(moved[0], [0.0, 0.25, 0.0]);
        assert_eq!(&moved[1..], &rest[1..]);

        let v = [0.3, -0.7];
        let once = displace_control_points(&l, &v).unwrap();
        let twice = displace_control_points(&l, &[0.6, -1.4]).unwrap();
        for ((a, b), r) in once.iter().zip(&twice).zip(&rest) {
            for d in 0..3 {
                assert_eq!(b[d] - r[d], 2.0 * (a[d] - r[d]));
            }
        }
    }

    #[test]
    fn centre_point_single_control_point() {
        // Degree 1 per axis: every tensor weight at the centre is 0.5^3.
        let l = unit_lattice([1, 1, 1], vec![var([1, 1, 1], 2)]);
        let g = Geometry::new(vec![0.5, 0.5, 0.5]).unwrap();
        let out = deform(&g, &[l], &[0.8]).unwrap();
        assert!((out.coords()[2] - (0.5 + 0.125 * 0.8)).abs() < 1e-15);
        assert_eq!(&out.coords()[..2], &[0.5, 0.5]);
    }

    #[test]
    fn zero_design_is_identity_and_outside_points_fixed() {
        let l = unit_lattice([2, 3, 2], vec![var([1, 1, 1], 0), var([1, 2, 1], 2)]);
        let g = Geometry::new(vec![0.2, 0.4, 0.6, 2.0, 2.0, 2.0]).unwrap();
        let out = deform(&g, &[l.clone()], &[0.0, 0.0]).unwrap();
        assert_eq!(out.coords(), g.coords());
        let out = deform(&g, &[l.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(&out.coords()[3..], &[2.0, 2.0, 2.0]);
        assert!(matches!(
            Embedding::new(&g, &[l], OutsidePolicy::Error),
            Err(Error::OutOfLattice { point: 1, .. })
        ));
    }

    #[test]
    fn face_points_are_clamped() {
        let l = unit_lattice([1, 1, 1], vec![var([1, 1, 1], 0)]);
        let g = Geometry::new(vec![1.0 + 5e-10, 1.0, 1.0, 1.0 + 1e-6, 1.0, 1.0]).unwrap();
        let e = Embedding::new(&g, &[l], OutsidePolicy::PassThrough).unwrap();
        assert_eq!(e.owner(0), Some((0, [1.0, 1.0, 1.0])));
        assert_eq!(e.owner(1), None);
    }

    #[test]
    fn first_containing_lattice_owns_point() {
        let a = unit_lattice([1, 1, 1], vec![var([1, 1, 1], 0)]);
        let mut b = a.clone();
        b.origin = [0.5, 0.0, 0.0];
        let g = Geometry::new(vec![0.75, 0.5, 0.5]).unwrap();
        let e = Embedding::new(&g, &[b.clone(), a.clone()], OutsidePolicy::PassThrough).unwrap();
        assert_eq!(e.owner(0).unwrap().0, 0);
        let e = Embedding::new(&g, &[a, b], OutsidePolicy::PassThrough).unwrap();
        assert_eq!(e.owner(0).unwrap().0, 0);
        assert!((e.owner(0).unwrap().1[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matrix_columns_are_unit_probes() {
        let l = FfdLattice {
            active: vec![var([1, 1, 2], 1), var([2, 0, 1], 0), var([0, 2, 3], 2)],
            ..skew_lattice()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut coords = Vec::new();
        for _ in 0..40 {
            let abc: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            for d in 0..3 {
                coords.push(l.origin[d] + (0..3).map(|a| abc[a] * l.axes[a][d]).sum::<f64>());
            }
        }
        let g = Geometry::new(coords).unwrap();
        let a = deformation_matrix(&g, std::slice::from_ref(&l)).unwrap();
        for m in 0..3 {
            let mut e = vec![0.0; 3];
            e[m] = 1.0;
            let out = deform(&g, std::slice::from_ref(&l), &e).unwrap();
            for r in 0..g.dim() {
                assert!((out.coords()[r] - g.coords()[r] - a[(r, m)]).abs() < 1e-14);
            }
        }
        let v = [0.3, -0.9, 0.45];
        let direct = deform(&g, std::slice::from_ref(&l), &v).unwrap();
        let av = &a * nalgebra::DVector::from_column_slice(&v);
        for r in 0..g.dim() {
            assert!((direct.coords()[r] - (g.coords()[r] + av[r])).abs() < 1e-10);
        }
    }

    #[test]
    fn design_length_checked() {
        let l = unit_lattice([1, 1, 1], vec![var([1, 1, 1], 0)]);
        let g = Geometry::new(vec![0.5; 3]).unwrap();
        assert!(matches!(
            deform(&g, &[l], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn duplicate_or_bad_variables_rejected() {
        let l = unit_lattice([1, 1, 1], vec![var([1, 1, 1], 0), var([1, 1, 1], 0)]);
        assert!(l.validate().is_err());
        let l = unit_lattice([1, 1, 1], vec![var([2, 1, 1], 0)]);
        assert!(l.validate().is_err());
        let mut bad = var([1, 1, 1], 0);
        bad.lower = 1.0;
        assert!(unit_lattice([1, 1, 1], vec![bad]).validate().is_err());
    }
}
