//! Robust kernels applied to squared residuals, `rho(s)` with `s = r^2`.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Default Cauchy scale for all robust refinement, in pixels.
pub const CAUCHY_PARAM: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "scale", rename_all = "snake_case")]
pub enum Kernel<T> {
    Squared,
    /// `a^2 log(1 + s / a^2)`.
    Cauchy(T),
}

impl<T: Real> Default for Kernel<T> {
    fn default() -> Self {
        Kernel::Cauchy(T::lit(CAUCHY_PARAM))
    }
}

impl<T: Real> Kernel<T> {
    pub fn rho(&self, s: T) -> T {
        match *self {
            Kernel::Squared => s,
            Kernel::Cauchy(a) => {
                let a2 = a * a;
                a2 * (s / a2).ln_1p()
            }
        }
    }

    /// `rho'(s)`.
    pub fn d1(&self, s: T) -> T {
        match *self {
            Kernel::Squared => T::one(),
            Kernel::Cauchy(a) => T::one() / (T::one() + s / (a * a)),
        }
    }

    /// `rho''(s)`.
    pub fn d2(&self, s: T) -> T {
        match *self {
            Kernel::Squared => T::zero(),
            Kernel::Cauchy(a) => {
                let a2 = a * a;
                let q = T::one() + s / a2;
                -T::one() / (a2 * q * q)
            }
        }
    }
}
