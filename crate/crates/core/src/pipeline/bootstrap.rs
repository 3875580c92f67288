use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationSet, View};
use crate::solvers::{decompose_essential, solve_essential_5pt, triangulate_depths, PoseCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    /// Median triangulation angle the initial pair must exceed, degrees.
    pub min_median_angle_deg: f64,
    /// Sampson distance gate, pixels.
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub max_iterations: usize,
    pub confidence: f64,
    /// Pairs tried, in decreasing match count, before giving up.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            min_median_angle_deg: 2.0,
            threshold_px: 2.0,
            min_inliers: 30,
            max_iterations: 2000,
            confidence: 0.9999,
            max_pairs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    /// Pose of the second view in the frame of the first, unit translation.
    pub pose: PoseCandidate<f64>,
    /// Keypoint index pairs `(a, b)` of the inlier matches.
    pub inliers: Vec<(u32, u32)>,
    pub median_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPair {
    pub view_a: u32,
    pub view_b: u32,
    pub relative: RelativePose,
    pub matches: usize,
}

/// Point match counts for every view pair `(a < b)`.
pub fn pair_match_counts(obs: &ObservationSet) -> BTreeMap<(u32, u32), usize> {
    let mut out = BTreeMap::new();
    for e in obs.matches.points.edges() {
        let (a, b) = (e.a.view_id.min(e.b.view_id), e.a.view_id.max(e.b.view_id));
        if a != b {
            *out.entry((a, b)).or_default() += 1;
        }
    }
    out
}

/// Squared Sampson distance of `x2^T E x1` in normalized coordinates.
fn sampson(e: &Matrix3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> f64 {
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let r = x2.dot(&ex1);
    let d = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if d <= 0.0 {
        f64::INFINITY
    } else {
        r * r / d
    }
}

/// Least-squares essential matrix from all inliers, projected onto the
/// essential manifold.
fn refit(x1: &[Vector3<f64>], x2: &[Vector3<f64>], idx: &[usize]) -> Option<Matrix3<f64>> {
    if idx.len() < 8 {
        return None;
    }
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for &k in idx {
        let mut row = SMatrix::<f64, 1, 9>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                row[3 * i + j] = x2[k][i] * x1[k][j];
            }
        }
        ata += row.transpose() * row;
    }
    let eig = ata.symmetric_eigen();
    let (k, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(k);
    let e = Matrix3::from_fn(|i, j| v[3 * i + j]);
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| s[*b].total_cmp(&s[*a]));
    let m = (s[order[0]] + s[order[1]]) * 0.5;
    s[order[0]] = m;
    s[order[1]] = m;
    s[order[2]] = 0.0;
    let e = u * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2])) * vt;
    let n = e.norm();
    (n > 0.0).then(|| e / n)
}

fn inliers_of(e: &Matrix3<f64>, x1: &[Vector3<f64>], x2: &[Vector3<f64>], gate: f64) -> (f64, Vec<usize>) {
    let mut cost = 0.0;
    let mut inl = vec![];
    for k in 0..x1.len() {
        let s = sampson(e, &x1[k], &x2[k]);
        cost += s.min(gate * gate);
        if s < gate * gate {
            inl.push(k);
        }
    }
    (cost, inl)
}

/// The factorization with the most inliers in front of both cameras.
fn choose_pose(e: &Matrix3<f64>, x1: &[Vector3<f64>], x2: &[Vector3<f64>], idx: &[usize]) -> Option<(PoseCandidate<f64>, Vec<usize>)> {
    let cands = decompose_essential(e).ok()?;
    let mut best: Option<(PoseCandidate<f64>, Vec<usize>)> = None;
    for c in cands {
        let front: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&k| triangulate_depths(&c, &x1[k], &x2[k]).is_some_and(|(d1, d2)| d1 > 0.0 && d2 > 0.0))
            .collect();
        if best.as_ref().is_none_or(|(_, b)| front.len() > b.len()) {
            best = Some((c, front));
        }
    }
    best
}

fn essential_of(p: &PoseCandidate<f64>) -> Matrix3<f64> {
    crate::geom::so3::skew(&p.translation) * p.rotation
}

/// Signed Sampson residuals of the matches in `idx`.
pub fn sampson_residuals(p: &PoseCandidate<f64>, x1: &[Vector3<f64>], x2: &[Vector3<f64>], idx: &[usize]) -> nalgebra::DVector<f64> {
    let e = essential_of(p);
    nalgebra::DVector::from_iterator(
        idx.len(),
        idx.iter().map(|&k| {
            let (ex1, etx2) = (e * x1[k], e.transpose() * x2[k]);
            let d = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
            if d > 0.0 { x2[k].dot(&ex1) / d.sqrt() } else { 0.0 }
        }),
    )
}

/// Pose after the 5-vector increment: left rotation, then a tangent step of
/// the unit translation.
fn perturbed(p: &PoseCandidate<f64>, delta: &[f64; 5]) -> PoseCandidate<f64> {
    let t = p.translation.normalize();
    let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    let b2 = t.cross(&b1);
    let rotation = crate::geom::so3::exp(&Vector3::new(delta[0], delta[1], delta[2])) * p.rotation;
    PoseCandidate { rotation, translation: (t + b1 * delta[3] + b2 * delta[4]).normalize() }
}

/// Levenberg-Marquardt on the Sampson residuals of the inliers, with
/// forward-difference Jacobians. The linear refit is biased when the
/// baseline is short; this is the maximum-likelihood polish.
pub fn refine_relative(p: &PoseCandidate<f64>, x1: &[Vector3<f64>], x2: &[Vector3<f64>], idx: &[usize]) -> PoseCandidate<f64> {
    let mut pose = *p;
    let mut r = sampson_residuals(&pose, x1, x2, idx);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let h = 1e-7;
        let mut j = nalgebra::DMatrix::zeros(idx.len(), 5);
        for c in 0..5 {
            let mut d = [0.0; 5];
            d[c] = h;
            j.set_column(c, &((sampson_residuals(&perturbed(&pose, &d), x1, x2, idx) - &r) / h));
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        for _ in 0..8 {
            let a = &jtj + nalgebra::DMatrix::from_diagonal(&jtj.diagonal()) * lambda;
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = perturbed(&pose, &[step[0], step[1], step[2], step[3], step[4]]);
            let rc = sampson_residuals(&cand, x1, x2, idx);
            let c = rc.norm_squared();
            if c < cost {
                let done = cost - c < 1e-12 * cost;
                (pose, r, cost) = (cand, rc, c);
                lambda = (lambda * 0.1).max(1e-9);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

/// Angle between the two viewing rays of a match, degrees.
fn ray_angle(pose: &PoseCandidate<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> f64 {
    let r1 = x1.normalize();
    let r2 = (pose.rotation.transpose() * x2).normalize();
    r1.dot(&r2).clamp(-1.0, 1.0).acos().to_degrees()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Inlier count below which the relative pose is not polished.
const POLISH_MIN_INLIERS: usize = 30;

/// Five-point RANSAC on the point matches of two views, followed by two
/// least-squares refits and a nonlinear polish on the inliers.
pub fn relative_pose(obs: &ObservationSet, a: u32, b: u32, cfg: &BootstrapConfig) -> Result<RelativePose> {
    let ia = obs.image(a).ok_or(Error::NoValidPair)?;
    let ib = obs.image(b).ok_or(Error::NoValidPair)?;
    let pairs = obs.matches.points.pairs_between(a, b);
    if pairs.len() < 5 {
        return Err(Error::NoValidPair);
    }
    let x1: Vec<Vector3<f64>> = pairs.iter().map(|(p, _)| ia.intrinsics.normalize(&ia.keypoints[*p as usize])).collect();
    let x2: Vec<Vector3<f64>> = pairs.iter().map(|(_, q)| ib.intrinsics.normalize(&ib.keypoints[*q as usize])).collect();
    let gate = cfg.threshold_px / (0.5 * (ia.intrinsics.focal() + ib.intrinsics.focal()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((a as u64) << 32 | b as u64));
    let mut best: Option<(f64, Matrix3<f64>, Vec<usize>)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let s = rand::seq::index::sample(&mut rng, pairs.len(), 5).into_vec();
        let s1 = [x1[s[0]], x1[s[1]], x1[s[2]], x1[s[3]], x1[s[4]]];
        let s2 = [x2[s[0]], x2[s[1]], x2[s[2]], x2[s[3]], x2[s[4]]];
        let Ok(es) = solve_essential_5pt(&s1, &s2) else { continue };
        for e in es {
            let (cost, inl) = inliers_of(&e, &x1, &x2, gate);
            if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
                let ratio = inl.len() as f64 / pairs.len() as f64;
                let p = ratio.powi(5);
                needed = if p >= 1.0 {
                    0
                } else if p <= 0.0 {
                    cfg.max_iterations
                } else {
                    ((1.0 - cfg.confidence).ln() / (1.0 - p).ln()).ceil() as usize
                };
                best = Some((cost, e, inl));
            }
        }
    }
    let (mut cost, mut e, mut inl) = best.ok_or(Error::NoValidPair)?;
    for _ in 0..2 {
        let Some(f) = refit(&x1, &x2, &inl) else { break };
        let (c, i) = inliers_of(&f, &x1, &x2, gate);
        if c > cost {
            break;
        }
        (cost, e, inl) = (c, f, i);
    }
    let (pose, front) = choose_pose(&e, &x1, &x2, &inl).ok_or(Error::NoValidPair)?;
    // With few inliers the unweighted polish is pulled by any outlier
    // that slipped under the gate; the minimal-sample pose is safer.
    let pose = if front.len() >= POLISH_MIN_INLIERS { refine_relative(&pose, &x1, &x2, &front) } else { pose };
    let (_, inl) = inliers_of(&essential_of(&pose), &x1, &x2, gate);
    let front: Vec<usize> = inl
        .into_iter()
        .filter(|&k| triangulate_depths(&pose, &x1[k], &x2[k]).is_some_and(|(d1, d2)| d1 > 0.0 && d2 > 0.0))
        .collect();
    let angle = median(front.iter().map(|&k| ray_angle(&pose, &x1[k], &x2[k])).collect());
    Ok(RelativePose {
        pose,
        inliers: front.iter().map(|&k| pairs[k]).collect(),
        median_angle_deg: angle,
    })
}

/// Tries view pairs in decreasing point-match count and returns the first
/// whose relative pose has enough inliers and median triangulation angle
/// above the gate.
pub fn bootstrap_pair_selection(obs: &ObservationSet, cfg: &BootstrapConfig) -> Result<InitialPair> {
    let mut pairs: Vec<((u32, u32), usize)> = pair_match_counts(obs).into_iter().collect();
    pairs.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    for ((a, b), n) in pairs.into_iter().take(cfg.max_pairs) {
        if n < cfg.min_inliers.max(5) {
            break;
        }
        let Ok(rel) = relative_pose(obs, a, b, cfg) else { continue };
        if rel.inliers.len() >= cfg.min_inliers && rel.median_angle_deg > cfg.min_median_angle_deg {
            log::info!(
                "initial pair ({a}, {b}): {} of {n} matches, median angle {:.2} deg",
                rel.inliers.len(),
                rel.median_angle_deg
            );
            return Ok(InitialPair {
                view_a: a,
                view_b: b,
                relative: rel,
                matches: n,
            });
        }
    }
    Err(Error::NoValidPair)
}

/// Views for an initial pair: `a` at the origin, `b` at the relative pose.
pub fn initial_views(obs: &ObservationSet, pair: &InitialPair) -> Result<(View, View)> {
    let ka = obs.image(pair.view_a).ok_or(Error::NoValidPair)?.intrinsics;
    let kb = obs.image(pair.view_b).ok_or(Error::NoValidPair)?.intrinsics;
    let va = View::new(pair.view_a, ka, Matrix3::identity(), Vector3::zeros())?;
    let p = &pair.relative.pose;
    let vb = View::new(pair.view_b, kb, crate::geom::so3::orthonormalize(&p.rotation), p.translation)?;
    Ok((va, vb))
}
