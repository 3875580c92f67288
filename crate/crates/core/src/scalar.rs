//! Scalar abstraction used by the geometric core.
//!
//! Geometry, minimal solvers and the line sensitivity analysis are written
//! against [`Real`] so they can run in `f32` or `f64`. The pipeline layer
//! (mapping, bundle adjustment, registration, I/O) is fixed to `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn degrees(self) -> Self {
        self * Self::lit(180.0 / std::f64::consts::PI)
    }

    #[inline]
    fn radians(self) -> Self {
        self * Self::lit(std::f64::consts::PI / 180.0)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
