//! Kernel-point interaction operators for 3D point clouds, the joint
//! interaction-dimension search space around them, an analytic cost model,
//! a dense-sparse performance predictor, and regularized-evolution
//! architecture search, validated against a deterministic synthetic
//! benchmark oracle.
//!
//! The numeric kernels (geometry, point clouds, interactions, predictor)
//! are generic over the scalar type via [`scalar::Scalar`]; concrete f64
//! aliases live at the crate root.

pub mod bench;
pub mod costmodel;
pub mod error;
pub mod geometry;
pub mod interaction;
pub mod linalg;
pub mod pointcloud;
pub mod predictor;
pub mod scalar;
pub mod search;
pub mod searchspace;

pub use error::{Error, Result};

/// Concrete aliases at the default (f64) precision.
pub type PointCloud64 = pointcloud::PointCloud<f64>;
pub type PointCloud32 = pointcloud::PointCloud<f32>;
pub type KernelDisposition64 = geometry::KernelDisposition<f64>;
pub type InfluenceRadius64 = geometry::InfluenceRadius<f64>;
pub type InteractionParams64 = interaction::InteractionParams<f64>;
pub type NetworkWeights64 = interaction::NetworkWeights<f64>;
pub type NetworkConfig64 = interaction::NetworkConfig<f64>;
pub type DsPredictor64 = predictor::DsPredictor<f64>;
