//! Reference-guided video colorization with temporal consistency metrics.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar for the common cases.

pub mod color;
pub mod config;
pub mod correspondence;
pub mod error;
pub mod features;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod propagation;
pub mod reference;
pub mod scalar;

pub use config::{Mode, PipelineConfig};
pub use error::{Error, Result};
pub use scalar::Real;

pub type Plane64 = color::Plane<f64>;
pub type Plane32 = color::Plane<f32>;
pub type LabImage64 = color::LabImage<f64>;
pub type LabImage32 = color::LabImage<f32>;
pub type FeatureMap64 = features::FeatureMap<f64>;
pub type FeatureMap32 = features::FeatureMap<f32>;
pub type PcaBasis64 = features::PcaBasis<f64>;
