//! Safe multi-agent coverage control on grid domains with unknown density
//! and constraint functions learned by Gaussian processes.

pub mod coverage;
pub mod domain;
pub mod environment;
pub mod error;
pub mod gp;
pub(crate) mod linalg;
pub mod macopt;
pub mod metrics;
pub mod rng;
pub mod safe_sets;
pub mod safemac;
pub mod scalar;

pub use domain::{CellSet, DiskMode, LocationId};
pub use error::{Error, Result};
pub use gp::KernelFamily;
pub use scalar::Scalar;

pub type GridDomain = domain::GridDomain<f64>;
pub type KernelSpec = gp::KernelSpec<f64>;
pub type GpModel = gp::GpModel<f64>;
pub type DomainPosterior = gp::DomainPosterior<f64>;
pub type ConfidenceBounds = gp::ConfidenceBounds<f64>;
pub type DensityField = coverage::DensityField<f64>;
pub type CoverageAssignment = coverage::CoverageAssignment<f64>;
pub type FieldBelief = gp::FieldBelief<f64>;
pub type EnvironmentTruth = environment::EnvironmentTruth<f64>;
pub type MacoptConfig = macopt::MacoptConfig<f64>;
pub type SafemacConfig = safemac::SafemacConfig<f64>;
pub type RunOutcome = macopt::RunOutcome<f64>;
pub type RoundLog = macopt::RoundLog<f64>;
pub type RegretRecord = metrics::RegretRecord<f64>;
