//! Five-point relative pose. The essential matrix lies in the 4D null
//! space of the epipolar constraints, `E = x X + y Y + z Z + W`; the rank
//! and trace constraints give ten cubics in `(x, y, z)`. Hiding `z` turns
//! them into a cubic matrix polynomial `C(z) v = 0` over the ten monomials
//! of degree <= 3 in `(x, y)`, solved as a linearized eigenproblem in
//! `1/z`. Each real root is polished by Gauss-Newton on all ten cubics.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

use super::PoseCandidate;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense cubic in three variables, coefficients indexed by exponent.
#[derive(Clone, Copy)]
struct Cubic<T: Real>([[[T; 4]; 4]; 4]);

impl<T: Real> Cubic<T> {
    fn zero() -> Self {
        Cubic([[[T::zero(); 4]; 4]; 4])
    }

    fn linear(x: T, y: T, z: T, w: T) -> Self {
        let mut c = Self::zero();
        c.0[1][0][0] = x;
        c.0[0][1][0] = y;
        c.0[0][0][1] = z;
        c.0[0][0][0] = w;
        c
    }

    fn add(&self, o: &Self) -> Self {
        let mut c = *self;
        c.each(|a, b, d, v| *v += o.0[a][b][d]);
        c
    }

    fn scale(&self, s: T) -> Self {
        let mut c = *self;
        c.each(|_, _, _, v| *v *= s);
        c
    }

    fn each(&mut self, mut f: impl FnMut(usize, usize, usize, &mut T)) {
        for a in 0..4 {
            for b in 0..4 - a {
                for d in 0..4 - a - b {
                    f(a, b, d, &mut self.0[a][b][d]);
                }
            }
        }
    }

    /// Product, truncated to total degree 3 (callers never exceed it).
    fn mul(&self, o: &Self) -> Self {
        let mut c = Self::zero();
        for a in 0..4 {
            for b in 0..4 - a {
                for d in 0..4 - a - b {
                    let v = self.0[a][b][d];
                    if v == T::zero() {
                        continue;
                    }
                    for e in 0..4 - a - b - d {
                        for f in 0..4 - a - b - d - e {
                            for g in 0..4 - a - b - d - e - f {
                                c.0[a + e][b + f][d + g] += v * o.0[e][f][g];
                            }
                        }
                    }
                }
            }
        }
        c
    }

    fn eval(&self, x: T, y: T, z: T) -> T {
        let mut s = T::zero();
        let mut c = *self;
        c.each(|a, b, d, v| s += *v * x.powi(a as i32) * y.powi(b as i32) * z.powi(d as i32));
        s
    }

    fn gradient(&self, x: T, y: T, z: T) -> Vector3<T> {
        let mut g = Vector3::zeros();
        let mut c = *self;
        let p = |v: T, k: usize| if k == 0 { T::zero() } else { T::lit(k as f64) * v.powi(k as i32 - 1) };
        c.each(|a, b, d, v| {
            let (xa, yb, zd) = (x.powi(a as i32), y.powi(b as i32), z.powi(d as i32));
            g.x += *v * p(x, a) * yb * zd;
            g.y += *v * xa * p(y, b) * zd;
            g.z += *v * xa * yb * p(z, d);
        });
        g
    }
}

/// Monomials in `(x, y)` of degree <= 3, in column order.
const XY: [(usize, usize); 10] = [(3, 0), (2, 1), (1, 2), (0, 3), (2, 0), (1, 1), (0, 2), (1, 0), (0, 1), (0, 0)];

type Mat3Cubic<T> = [[Cubic<T>; 3]; 3];

fn mat_mul<T: Real>(a: &Mat3Cubic<T>, b: &Mat3Cubic<T>) -> Mat3Cubic<T> {
    let mut c = [[Cubic::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] = c[i][j].add(&a[i][k].mul(&b[k][j]));
            }
        }
    }
    c
}

fn constraints<T: Real>(basis: &[Matrix3<T>; 4]) -> Vec<Cubic<T>> {
    let [bx, by, bz, bw] = basis;
    let mut e = [[Cubic::zero(); 3]; 3];
    let mut et = [[Cubic::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            e[i][j] = Cubic::linear(bx[(i, j)], by[(i, j)], bz[(i, j)], bw[(i, j)]);
            et[j][i] = e[i][j];
        }
    }
    let eet = mat_mul(&e, &et);
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = mat_mul(&eet, &e);
    let mut out = Vec::with_capacity(10);
    // det(E) by cofactors along the first row.
    let minor = |a: usize, b: usize, c: usize, d: usize| e[1][a].mul(&e[2][b]).add(&e[1][c].mul(&e[2][d]).scale(-T::one()));
    let det = e[0][0]
        .mul(&minor(1, 2, 2, 1))
        .add(&e[0][1].mul(&minor(0, 2, 2, 0)).scale(-T::one()))
        .add(&e[0][2].mul(&minor(0, 1, 1, 0)));
    out.push(det);
    for i in 0..3 {
        for j in 0..3 {
            out.push(eete[i][j].scale(T::lit(2.0)).add(&trace.mul(&e[i][j]).scale(-T::one())));
        }
    }
    out
}

/// Four 3x3 matrices spanning the null space of the epipolar constraints.
fn null_basis<T: Real>(x1: &[Vector3<T>; 5], x2: &[Vector3<T>; 5]) -> Result<[Matrix3<T>; 4]> {
    let mut a = SMatrix::<T, 9, 9>::zeros();
    for k in 0..5 {
        for i in 0..3 {
            for j in 0..3 {
                a[(k, 3 * i + j)] = x2[k][i] * x1[k][j];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(Error::DegenerateSample)?;
    let mut sv: Vec<(T, usize)> = svd.singular_values.iter().copied().zip(0..9).collect();
    sv.sort_by(|p, q| q.0.partial_cmp(&p.0).unwrap_or(std::cmp::Ordering::Equal));
    if sv[4].0 <= T::lit(1e-10) * sv[0].0 {
        return Err(Error::DegenerateSample);
    }
    let m = |r: usize| Matrix3::from_fn(|i, j| vt[(r, 3 * i + j)]);
    Ok([m(sv[5].1), m(sv[6].1), m(sv[7].1), m(sv[8].1)])
}

fn polish<T: Real>(eqs: &[Cubic<T>], mut p: Vector3<T>) -> Vector3<T> {
    for _ in 0..6 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for q in eqs {
            let r = q.eval(p.x, p.y, p.z);
            let g = q.gradient(p.x, p.y, p.z);
            jtj += g * g.transpose();
            jtr += g * r;
        }
        match jtj.cholesky() {
            Some(c) => p -= c.solve(&jtr),
            None => break,
        }
    }
    p
}

/// Essential matrices `E` with `x2^T E x1 = 0` for five bearing pairs,
/// each normalized to unit Frobenius norm.
pub fn solve_essential_5pt<T: Real>(x1: &[Vector3<T>; 5], x2: &[Vector3<T>; 5]) -> Result<Vec<Matrix3<T>>> {
    let basis = null_basis(x1, x2)?;
    let eqs = constraints(&basis);
    let mut c = [DMatrix::<T>::zeros(10, 10), DMatrix::zeros(10, 10), DMatrix::zeros(10, 10), DMatrix::zeros(10, 10)];
    for (r, q) in eqs.iter().enumerate() {
        for (col, (a, b)) in XY.iter().enumerate() {
            for d in 0..=(3 - a - b) {
                c[d][(r, col)] = q.0[*a][*b][d];
            }
        }
    }
    let c0inv = c[0].clone().try_inverse().ok_or(Error::DegenerateSample)?;
    let mut lin = DMatrix::<T>::zeros(30, 30);
    for i in 0..20 {
        lin[(i, i + 10)] = T::one();
    }
    for (blk, d) in [(0, 3), (1, 2), (2, 1)] {
        let m = -(&c0inv * &c[d]);
        lin.view_mut((20, 10 * blk), (10, 10)).copy_from(&m);
    }
    let mut out: Vec<Matrix3<T>> = Vec::new();
    for mu in lin.complex_eigenvalues().iter() {
        let tol = T::lit(1e-6) * (T::one() + mu.re.abs());
        if mu.im.abs() > tol || mu.re.abs() < T::lit(1e-10) {
            continue;
        }
        let z = T::one() / mu.re;
        let cz = &c[0] + &c[1] * z + &c[2] * (z * z) + &c[3] * (z * z * z);
        let svd = cz.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (k, _) = svd.singular_values.argmin();
        let v = vt.row(k);
        if v[9].abs() < T::lit(1e-12) {
            continue;
        }
        let p = polish(&eqs, Vector3::new(v[7] / v[9], v[8] / v[9], z));
        let e = basis[0] * p.x + basis[1] * p.y + basis[2] * p.z + basis[3];
        let n = e.norm();
        if n == T::zero() {
            continue;
        }
        let e = e / n;
        let resid = eqs.iter().map(|q| q.eval(p.x, p.y, p.z).abs()).fold(T::zero(), |a, b| a.max(b)) / (n * n * n);
        if resid > T::lit(1e-6) {
            continue;
        }
        if !out.iter().any(|f| (f - e).norm() < T::lit(1e-8) || (f + e).norm() < T::lit(1e-8)) {
            out.push(e);
        }
    }
    if out.is_empty() {
        return Err(Error::NoSolution);
    }
    Ok(out)
}

/// The four `(R, t)` factorizations of `E = [t]x R` with unit `t`.
pub fn decompose_essential<T: Real>(e: &Matrix3<T>) -> Result<[PoseCandidate<T>; 4]> {
    let svd = e.svd(true, true);
    let (Some(mut u), Some(mut vt)) = (svd.u, svd.v_t) else {
        return Err(Error::DegenerateInput);
    };
    // Sort singular vectors so the smallest is last.
    let s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|a, b| s[*b].partial_cmp(&s[*a]).unwrap_or(std::cmp::Ordering::Equal));
    let u0 = u;
    let vt0 = vt;
    for (k, i) in idx.iter().enumerate() {
        u.set_column(k, &u0.column(*i));
        vt.set_row(k, &vt0.row(*i));
    }
    if u.determinant() < T::zero() {
        u = -u;
    }
    if vt.determinant() < T::zero() {
        vt = -vt;
    }
    let w = Matrix3::new(T::zero(), -T::one(), T::zero(), T::one(), T::zero(), T::zero(), T::zero(), T::zero(), T::one());
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<T> = u.column(2).into_owned();
    Ok([
        PoseCandidate::new(r1, t),
        PoseCandidate::new(r1, -t),
        PoseCandidate::new(r2, t),
        PoseCandidate::new(r2, -t),
    ])
}

/// Depths `(d1, d2)` with `d2 x2 = R d1 x1 + t`, in the least-squares sense.
pub fn triangulate_depths<T: Real>(pose: &PoseCandidate<T>, x1: &Vector3<T>, x2: &Vector3<T>) -> Option<(T, T)> {
    let a = pose.rotation * x1;
    // d1 a - d2 x2 = -t
    let m = nalgebra::Matrix3x2::from_columns(&[a, -x2]);
    let mtm = m.transpose() * m;
    let sol = mtm.try_inverse()? * (m.transpose() * -pose.translation);
    Some((sol.x, sol.y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
    }

    fn problem(rng: &mut ChaCha8Rng) -> (PoseCandidate<f64>, [Vector3<f64>; 5], [Vector3<f64>; 5]) {
        let r = so3::exp(&(unit(rng) * rng.random_range(0.05..0.5)));
        let t = unit(rng);
        let pose = PoseCandidate::new(r, t);
        let mut x1 = [Vector3::zeros(); 5];
        let mut x2 = [Vector3::zeros(); 5];
        for k in 0..5 {
            let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..10.0));
            x1[k] = p.normalize();
            x2[k] = pose.transform(&p).normalize();
        }
        (pose, x1, x2)
    }

    #[test]
    fn recovers_true_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        let n = 200;
        for _ in 0..n {
            let (pose, x1, x2) = problem(&mut rng);
            let truth = so3::skew(&pose.translation) * pose.rotation;
            let truth = truth / truth.norm();
            let Ok(es) = solve_essential_5pt(&x1, &x2) else { continue };
            assert!(es.len() <= 10);
            if es.iter().any(|e| (e - truth).norm().min((e + truth).norm()) < 1e-6) {
                hits += 1;
            }
        }
        assert!(hits >= n * 99 / 100, "{hits}");
    }

    #[test]
    fn solutions_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, x1, x2) = problem(&mut rng);
        for e in solve_essential_5pt(&x1, &x2).unwrap() {
            for k in 0..5 {
                assert!((x2[k].transpose() * e * x1[k])[0].abs() < 1e-9);
            }
            let s = e.singular_values();
            let mut s: Vec<f64> = s.iter().copied().collect();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!((s[0] - s[1]).abs() < 1e-8 && s[2] < 1e-8);
        }
    }

    #[test]
    fn decomposition_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pose, _, _) = problem(&mut rng);
        let e = so3::skew(&pose.translation) * pose.rotation;
        let cands = decompose_essential(&e).unwrap();
        assert!(cands
            .iter()
            .any(|c| (c.rotation - pose.rotation).norm() < 1e-9 && (c.translation - pose.translation).norm() < 1e-9));
        for c in &cands {
            assert!((c.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn depths_are_positive_for_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pose, x1, x2) = problem(&mut rng);
        for k in 0..5 {
            let (d1, d2) = triangulate_depths(&pose, &x1[k], &x2[k]).unwrap();
            assert!(d1 > 0.0 && d2 > 0.0);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let x = [Vector3::new(0.0, 0.0, 1.0); 5];
        assert!(solve_essential_5pt(&x, &x).is_err());
    }
}
