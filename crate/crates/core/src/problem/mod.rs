//! Optimization problems: hidden geometric constraints, the penalty rule and
//! the full-space, latent and anomaly-aware objective wrappers.

pub mod constraints;
pub mod resistance;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{AnomalyThreshold, GaussianDensity};
use crate::error::{Error, Result};
use crate::geometry::{deformation_matrix, FfdLattice, Geometry, HullGrid, HullParams};
use crate::latent::LatentModel;
use crate::optim::{ConstraintFlag, Evaluation, Objective};

pub use constraints::{
    dome_volume, hull_constraints, hull_measures, ConstraintTolerances, HullConstraints, HullMeasures,
    CONSTRAINT_NAMES, DEGENERATE_VIOLATION,
};
pub use resistance::{longitudinal_curvature, wetted_surface, ResistanceSpec, SyntheticResistance};

/// Name of the flag raised when a design lies beyond the anomaly threshold.
pub const ANOMALY_FLAG: &str = "anomaly";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySpec {
    pub h: f64,
    pub psi: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self { h: 50.0, psi: 1000.0 }
    }
}

/// `h + psi * sum(violations)`.
pub fn penalty_value(violations: &[f64], spec: &PenaltySpec) -> f64 {
    spec.h + spec.psi * violations.iter().sum::<f64>()
}

/// Baseline hull, its FFD parametrization, constraints and objective.
#[derive(Debug, Clone)]
pub struct HullProblem {
    pub params: HullParams,
    pub baseline: Geometry,
    pub grid: HullGrid,
    pub lattices: Vec<FfdLattice>,
    pub constraints: HullConstraints,
    pub objective: SyntheticResistance,
    pub penalty: PenaltySpec,
    /// `x(v) = g0 + A v`.
    a: DMatrix<f64>,
    g0: DVector<f64>,
}

impl HullProblem {
    pub fn new(
        params: HullParams,
        lattices: Vec<FfdLattice>,
        tolerances: ConstraintTolerances,
        resistance: ResistanceSpec,
        penalty: PenaltySpec,
    ) -> Result<Self> {
        let (baseline, grid) = params.generate()?;
        let a = deformation_matrix(&baseline, &lattices)?;
        let g0 = baseline.to_vector();
        let bounds: Vec<(f64, f64)> = lattices.iter().flat_map(FfdLattice::bounds).collect();
        let objective = SyntheticResistance::new(resistance, &baseline, grid, &bounds, |v| {
            Geometry::from_vector(&(&g0 + &a * DVector::from_column_slice(v)))
        })?;
        let constraints = HullConstraints::new(&baseline, grid, params.waterline_z, params.dome.clone(), tolerances);
        Ok(Self {
            params,
            baseline,
            grid,
            lattices,
            constraints,
            objective,
            penalty,
            a,
            g0,
        })
    }

    /// Desk-scale problem with the default hull, lattices and constants.
    pub fn desk(resistance_seed: u64) -> Result<Self> {
        let params = HullParams::default();
        let lattices = crate::geometry::desk_lattices(&params);
        let resistance = ResistanceSpec {
            seed: resistance_seed,
            ..Default::default()
        };
        Self::new(params, lattices, Default::default(), resistance, Default::default())
    }

    pub fn num_variables(&self) -> usize {
        self.a.ncols()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lattices.iter().flat_map(FfdLattice::bounds).collect()
    }

    pub fn deformation_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn deform(&self, v: &[f64]) -> Result<Geometry> {
        if v.len() != self.num_variables() {
            return Err(Error::DimensionMismatch {
                expected: self.num_variables(),
                got: v.len(),
            });
        }
        Geometry::from_vector(&(&self.g0 + &self.a * DVector::from_column_slice(v)))
    }

    pub fn baseline_value(&self) -> f64 {
        self.objective.value(&self.baseline)
    }

    /// Check the constraints (plus any extra flags) and run the objective only when all hold.
    pub fn assess(&self, x: &Geometry, extra: Vec<ConstraintFlag>, mahalanobis_sq: Option<f64>) -> Evaluation {
        let mut flags = self.constraints.evaluate(x);
        flags.extend(extra);
        let violations: Vec<f64> = flags.iter().map(|c| c.violation).filter(|&v| v > 0.0).collect();
        if violations.is_empty() {
            Evaluation {
                value: self.objective.value(x),
                evaluated: true,
                constraints: flags,
                mahalanobis_sq,
            }
        } else {
            Evaluation {
                value: penalty_value(&violations, &self.penalty),
                evaluated: false,
                constraints: flags,
                mahalanobis_sq,
            }
        }
    }

    fn degenerate(&self, mahalanobis_sq: Option<f64>) -> Evaluation {
        let flags: Vec<ConstraintFlag> = CONSTRAINT_NAMES
            .iter()
            .map(|n| ConstraintFlag {
                name: (*n).into(),
                violation: DEGENERATE_VIOLATION,
            })
            .collect();
        Evaluation {
            value: penalty_value(&vec![DEGENERATE_VIOLATION; flags.len()], &self.penalty),
            evaluated: false,
            constraints: flags,
            mahalanobis_sq,
        }
    }
}

/// Deform, check the hidden constraints, then penalize or run the objective.
pub fn full_space_objective(v: &[f64], problem: &HullProblem) -> Evaluation {
    match problem.deform(v) {
        Ok(x) => problem.assess(&x, Vec::new(), None),
        Err(_) => problem.degenerate(None),
    }
}

/// Full-space objective as an optimizer callback.
pub struct FullSpace<'a>(pub &'a HullProblem);

impl Objective for FullSpace<'_> {
    fn evaluate(&mut self, x: &[f64]) -> Evaluation {
        full_space_objective(x, self.0)
    }
}

/// Optimization over the latent space of a fitted model.
#[derive(Debug, Clone)]
pub struct LatentProblem<'a> {
    pub hull: &'a HullProblem,
    pub model: &'a LatentModel,
    /// Present for PPCA and FA; every evaluation then records `d^2_M`.
    pub density: Option<GaussianDensity>,
    /// `phi_max`; when set, designs beyond it are penalized.
    pub phi_max: Option<f64>,
}

impl<'a> LatentProblem<'a> {
    pub fn new(hull: &'a HullProblem, model: &'a LatentModel, threshold: Option<&AnomalyThreshold>) -> Result<Self> {
        if model.dim() != hull.baseline.dim() {
            return Err(Error::DimensionMismatch {
                expected: hull.baseline.dim(),
                got: model.dim(),
            });
        }
        let density = match model.covariance() {
            Some(_) => Some(GaussianDensity::from_model(model)?),
            None => None,
        };
        if threshold.is_some() && density.is_none() {
            return Err(Error::Config(format!(
                "an anomaly threshold needs a density; {} defines none",
                model.kind().name()
            )));
        }
        Ok(Self {
            hull,
            model,
            density,
            phi_max: threshold.map(|t| t.phi_max),
        })
    }

    pub fn without_threshold(&self) -> Self {
        Self {
            phi_max: None,
            ..self.clone()
        }
    }
}

/// Decode `z`, check the geometric constraints and, when a threshold is set,
/// the anomaly constraint `d^2_M <= phi_max` with violation `(d^2_M - phi_max) / phi_max`.
pub fn latent_objective(z: &[f64], problem: &LatentProblem<'_>) -> Evaluation {
    let x = problem.model.decode(&DVector::from_column_slice(z));
    let d2 = problem.density.as_ref().and_then(|g| g.mahalanobis_sq(&x).ok());
    let Ok(geom) = Geometry::from_vector(&x) else {
        return problem.hull.degenerate(d2);
    };
    let mut extra = Vec::new();
    if let Some(phi) = problem.phi_max {
        let violation = match d2 {
            Some(d) if d.is_finite() => ((d - phi) / phi).max(0.0),
            _ => DEGENERATE_VIOLATION,
        };
        extra.push(ConstraintFlag {
            name: ANOMALY_FLAG.into(),
            violation,
        });
    }
    problem.hull.assess(&geom, extra, d2)
}

impl Objective for LatentProblem<'_> {
    fn evaluate(&mut self, x: &[f64]) -> Evaluation {
        latent_objective(x, self)
    }
}
