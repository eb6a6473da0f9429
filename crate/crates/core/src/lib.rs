//! Gradient-domain blending of signals stored as continuous neural fields.
//!
//! The crate contains a boundary-condition-free Poisson solver that
//! optimizes a neural field directly ([`solver`]), the classical discrete
//! Poisson image editing baseline it is measured against ([`classical`]), a
//! voxel radiance-field extension ([`radiance`]) and the evaluation harness
//! ([`harness`], [`metrics`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the storage type used by the command-line tools.

pub mod classical;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod inr;
pub mod metrics;
pub mod optim;
pub mod radiance;
pub mod raster;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision field, the storage type of checkpoints.
pub type Inr = inr::InrModel<f32>;
/// Double-precision field, used by derivative checks.
pub type Inr64 = inr::InrModel<f64>;
pub type Image = raster::Raster<f32>;
pub type Image64 = raster::Raster<f64>;
pub type VoxelField = radiance::VoxelRadianceField<f32>;
pub type VoxelField64 = radiance::VoxelRadianceField<f64>;
