//! Incremental structure-from-motion over points, line segments and
//! vanishing points, with analytic covariance propagation for optimized
//! 3D lines.

pub mod error;
pub mod geom;
pub mod io;
pub mod mapping;
pub mod model;
pub mod pipeline;
pub mod poly;
pub mod refine;
pub mod registration;
pub mod residual;
pub mod robust;
pub mod scalar;
pub mod solvers;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic geometry and solver types.
pub type Intrinsics = geom::Intrinsics<f64>;
pub type CameraView = geom::CameraView<f64>;
pub type Line3 = geom::Line3<f64>;
pub type OrthoLine = geom::OrthoLine<f64>;
pub type Segment2 = geom::Segment2<f64>;
pub type Segment3 = geom::Segment3<f64>;
pub type PoseCandidate = solvers::PoseCandidate<f64>;
pub type PointCorr = solvers::PointCorr<f64>;
pub type LineCorr = solvers::LineCorr<f64>;
pub type VpCorr = solvers::VpCorr<f64>;
