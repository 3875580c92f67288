//! Dense univariate polynomials with real-root extraction.

use nalgebra::DMatrix;

use crate::scalar::Real;

/// Polynomial with coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly<T: Real> {
    pub coeffs: Vec<T>,
}

impl<T: Real> Poly<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        Self { coeffs }
    }

    pub fn constant(c: T) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: T) -> T {
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, c| acc * x + *c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self::constant(T::zero());
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| *c * T::from_usize(i).unwrap())
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |p: &Self, i: usize| p.coeffs.get(i).copied().unwrap_or_else(T::zero);
        Self::new((0..n).map(|i| get(self, i) + get(other, i)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.coeffs.iter().map(|c| *c * s).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self::constant(T::zero());
        }
        let mut out = vec![T::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += *a * *b;
            }
        }
        Self::new(out)
    }

    /// Largest absolute coefficient.
    pub fn magnitude(&self) -> T {
        self.coeffs.iter().fold(T::zero(), |m, c| m.max(c.abs()))
    }

    /// Drops leading coefficients below `rel_tol * magnitude()`.
    pub fn trimmed(&self, rel_tol: T) -> Self {
        let mag = self.magnitude();
        let mut c = self.coeffs.clone();
        while c.len() > 1 && c.last().unwrap().abs() <= rel_tol * mag {
            c.pop();
        }
        Self::new(c)
    }

    /// Real roots, via companion-matrix eigenvalues polished by Newton's
    /// method. Roots closer than `1e-10 (1 + |x|)` are merged.
    pub fn real_roots(&self) -> Vec<T> {
        let p = self.trimmed(T::lit(1e-14));
        let n = p.degree();
        if n == 0 {
            return vec![];
        }
        let lead = *p.coeffs.last().unwrap();
        let mut candidates: Vec<T> = Vec::with_capacity(n);
        if n == 1 {
            candidates.push(-p.coeffs[0] / lead);
        } else if n == 2 {
            let (a, b, c) = (lead, p.coeffs[1], p.coeffs[0]);
            let disc = b * b - T::lit(4.0) * a * c;
            let scale = (b * b).max((T::lit(4.0) * a * c).abs()).max(T::default_epsilon());
            if disc.abs() <= T::lit(1e-10) * scale {
                candidates.push(-b / (T::lit(2.0) * a));
            } else if disc > T::zero() {
                let sq = disc.sqrt();
                let q = if b >= T::zero() {
                    -(b + sq) * T::lit(0.5)
                } else {
                    (sq - b) * T::lit(0.5)
                };
                candidates.push(q / a);
                if q != T::zero() {
                    candidates.push(c / q);
                }
            }
        } else {
            let mut comp = DMatrix::<T>::zeros(n, n);
            for i in 1..n {
                comp[(i, i - 1)] = T::one();
            }
            for i in 0..n {
                comp[(i, n - 1)] = -p.coeffs[i] / lead;
            }
            let eig = comp.complex_eigenvalues();
            for z in eig.iter() {
                let tol = T::lit(1e-6) * (T::one() + z.re.abs());
                if z.im.abs() <= tol {
                    candidates.push(z.re);
                }
            }
        }
        let dp = p.derivative();
        let mut roots: Vec<T> = Vec::new();
        for mut x in candidates {
            for _ in 0..8 {
                let fx = p.eval(x);
                let dfx = dp.eval(x);
                if dfx == T::zero() {
                    break;
                }
                let step = fx / dfx;
                let next = x - step;
                if !next.is_finite() {
                    break;
                }
                // Only accept Newton steps that reduce the residual.
                if p.eval(next).abs() > fx.abs() {
                    break;
                }
                x = next;
                if step.abs() <= T::default_epsilon() * (T::one() + x.abs()) {
                    break;
                }
            }
            if !roots
                .iter()
                .any(|r| (*r - x).abs() <= T::lit(1e-10) * (T::one() + x.abs()))
            {
                roots.push(x);
            }
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        roots
    }
}
