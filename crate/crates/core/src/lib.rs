//! Anomaly-aware simulation-based design optimization in reduced latent spaces.
//!
//! The crate covers the full loop: free-form deformation of a baseline hull,
//! linear latent-variable models fitted on sampled geometries, Mahalanobis
//! anomaly scoring, derivative-free global optimizers and the problem
//! wrappers that tie them together.

pub mod error;
pub mod geometry;
pub mod density;
pub mod io;
pub mod latent;
pub mod optim;
pub mod pipeline;
pub mod problem;

pub use error::{Error, Result};
