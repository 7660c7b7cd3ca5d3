pub mod dataset;
pub mod ffd;
pub mod hull;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub use dataset::{sample_dataset, Dataset, SamplingStats};
pub use ffd::{
    bernstein, deform, deformation_matrix, displace_control_points, local_coords, ActiveVariable,
    Embedding, FfdLattice, OutsidePolicy,
};
pub use hull::{desk_lattices, DomeSpec, HullGrid, HullParams};

/// Flattened `(x, y, z)` coordinates of `L` grid points, `D = 3L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    coords: Vec<f64>,
}

impl Geometry {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::Domain(format!(
                "geometry length {} is not a multiple of 3",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate at index {i}")));
        }
        Ok(Self { coords })
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn num_points(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn point(&self, p: usize) -> [f64; 3] {
        [self.coords[3 * p], self.coords[3 * p + 1], self.coords[3 * p + 2]]
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}
