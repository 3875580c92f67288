//! Joint Levenberg-Marquardt over camera poses, points and lines, with the
//! structure blocks eliminated by a dense Schur complement. VP tracks
//! contribute pose-only residuals.
//!
//! Robust kernels enter through their first derivative (IRLS weights on
//! `J^T J` and `J^T r`); steps are accepted only if the total robust cost
//! decreases.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::track::{keypoint_of, segment_of, vp_world_direction};
use crate::error::{Error, Result};
use crate::geom::{line::orthogonal_unit, so3, OrthoLine, Segment3};
use crate::model::{Map, ObservationSet, Support, TrackId, View};
use crate::residual::{endpoint_pose_jacobian, point_pose_jacobian, PluckerChart};
use crate::robust::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaOptions {
    pub line_kernel: Kernel<f64>,
    pub point_kernel: Kernel<f64>,
    pub vp_kernel: Kernel<f64>,
    pub max_iterations: usize,
    /// Relative cost decrease below which iterations stop.
    pub cost_tolerance: f64,
}

impl Default for BaOptions {
    fn default() -> Self {
        Self {
            line_kernel: Kernel::default(),
            point_kernel: Kernel::Cauchy(1.0),
            vp_kernel: Kernel::default(),
            max_iterations: 30,
            cost_tolerance: 1e-12,
        }
    }
}

/// Which parameters move. Views outside `variable_views` are held fixed;
/// `fixed_translation` pins one translation component of one view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaProblem {
    pub variable_views: BTreeSet<u32>,
    pub fixed_translation: Option<(u32, usize)>,
    pub points: Vec<TrackId>,
    pub lines: Vec<TrackId>,
    /// Pose-only VP residuals.
    pub vps: Vec<TrackId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub n_residuals: usize,
    /// Smallest eigenvalue of the undamped reduced camera system at the
    /// final state, scaled by its largest.
    pub reduced_min_eigen_ratio: Option<f64>,
}

struct PointObs {
    track: usize,
    view: u32,
    x: Vector2<f64>,
}

struct LineObs {
    track: usize,
    view: u32,
    start: Vector2<f64>,
    end: Vector2<f64>,
}

struct VpObs {
    view: u32,
    bearing: Vector3<f64>,
    direction: Vector3<f64>,
}

#[derive(Clone)]
struct State {
    views: BTreeMap<u32, View>,
    points: Vec<Vector3<f64>>,
    lines: Vec<OrthoLine<f64>>,
}

struct Problem<'a> {
    opts: &'a BaOptions,
    cams: BTreeMap<u32, usize>,
    fixed: Option<(usize, usize)>,
    points: Vec<PointObs>,
    lines: Vec<LineObs>,
    vps: Vec<VpObs>,
}

/// Undirected VP residual in the tangent plane of the observed bearing.
fn vp_residual(view: &View, o: &VpObs) -> (Vector2<f64>, nalgebra::Matrix2x3<f64>) {
    let u = view.rotation * o.direction;
    let s = if u.dot(&o.bearing) < 0.0 { -1.0 } else { 1.0 };
    let b1 = orthogonal_unit(&o.bearing);
    let b2 = o.bearing.cross(&b1);
    let r = Vector2::new(b1.dot(&u), b2.dot(&u)) * s;
    let basis = nalgebra::Matrix2x3::from_rows(&[b1.transpose(), b2.transpose()]);
    (r, basis * -so3::skew(&u) * s)
}

/// Accumulators of the normal equations.
struct Normal {
    hcc: DMatrix<f64>,
    gc: DVector<f64>,
    hjj: Vec<DMatrix<f64>>,
    gj: Vec<DVector<f64>>,
    hcj: Vec<BTreeMap<usize, DMatrix<f64>>>,
}

impl<'a> Problem<'a> {
    fn cost(&self, st: &State) -> Option<f64> {
        let mut c = 0.0;
        for o in &self.points {
            let v = &st.views[&o.view];
            let x = st.points[o.track];
            if v.depth(&x) <= 0.0 {
                return None;
            }
            let (r, _, _) = point_pose_jacobian(v, &x, &o.x);
            c += self.opts.point_kernel.rho(r.norm_squared());
        }
        for o in &self.lines {
            let v = &st.views[&o.view];
            let chart = PluckerChart::new(&st.lines[o.track]);
            for x in [o.start, o.end] {
                let (d, _, _) = endpoint_pose_jacobian(v, &chart, &x).ok()?;
                c += self.opts.line_kernel.rho(d * d);
            }
        }
        for o in &self.vps {
            let (r, _) = vp_residual(&st.views[&o.view], o);
            c += self.opts.vp_kernel.rho(r.norm_squared());
        }
        c.is_finite().then_some(c)
    }

    fn n_tracks(&self, st: &State) -> usize {
        st.points.len() + st.lines.len()
    }

    fn block_size(&self, st: &State, j: usize) -> usize {
        if j < st.points.len() {
            3
        } else {
            4
        }
    }

    fn linearize(&self, st: &State) -> Result<Normal> {
        let nc = self.cams.len() * 6;
        let nt = self.n_tracks(st);
        let mut n = Normal {
            hcc: DMatrix::zeros(nc, nc),
            gc: DVector::zeros(nc),
            hjj: (0..nt).map(|j| DMatrix::zeros(self.block_size(st, j), self.block_size(st, j))).collect(),
            gj: (0..nt).map(|j| DVector::zeros(self.block_size(st, j))).collect(),
            hcj: (0..nt).map(|_| BTreeMap::new()).collect(),
        };
        let np = st.points.len();
        let add = |n: &mut Normal, j: Option<usize>, cam: Option<usize>, r: &DVector<f64>, js: &DMatrix<f64>, jc: &DMatrix<f64>, w: f64| {
            if let Some(j) = j {
                n.hjj[j] += js.transpose() * js * w;
                n.gj[j] += js.transpose() * r * w;
            }
            if let Some(c) = cam {
                let o = c * 6;
                let mut blk = n.hcc.view_mut((o, o), (6, 6));
                blk += jc.transpose() * jc * w;
                let mut g = n.gc.rows_mut(o, 6);
                g += jc.transpose() * r * w;
                if let Some(j) = j {
                    let e = n.hcj[j].entry(c).or_insert_with(|| DMatrix::zeros(6, js.ncols()));
                    *e += jc.transpose() * js * w;
                }
            }
        };
        for o in &self.points {
            let v = &st.views[&o.view];
            let (r, jx, jp) = point_pose_jacobian(v, &st.points[o.track], &o.x);
            let w = self.opts.point_kernel.d1(r.norm_squared());
            let r = DVector::from_column_slice(r.as_slice());
            let js = DMatrix::from_column_slice(2, 3, jx.as_slice());
            let jc = DMatrix::from_column_slice(2, 6, jp.as_slice());
            add(&mut n, Some(o.track), self.cams.get(&o.view).copied(), &r, &js, &jc, w);
        }
        for o in &self.lines {
            let v = &st.views[&o.view];
            let chart = PluckerChart::new(&st.lines[o.track]);
            for x in [o.start, o.end] {
                let (d, dphi, dpose) = endpoint_pose_jacobian(v, &chart, &x)?;
                let w = self.opts.line_kernel.d1(d * d);
                let r = DVector::from_element(1, d);
                let js = DMatrix::from_row_slice(1, 4, dphi.as_slice());
                let jc = DMatrix::from_row_slice(1, 6, dpose.as_slice());
                add(&mut n, Some(np + o.track), self.cams.get(&o.view).copied(), &r, &js, &jc, w);
            }
        }
        for o in &self.vps {
            let Some(&c) = self.cams.get(&o.view) else { continue };
            let (r, jw) = vp_residual(&st.views[&o.view], o);
            let w = self.opts.vp_kernel.d1(r.norm_squared());
            let mut jc = DMatrix::zeros(2, 6);
            jc.view_mut((0, 0), (2, 3)).copy_from(&jw);
            let r = DVector::from_column_slice(r.as_slice());
            add(&mut n, None, Some(c), &r, &DMatrix::zeros(2, 0), &jc, w);
        }
        if let Some((c, k)) = self.fixed {
            let i = c * 6 + 3 + k;
            n.hcc.row_mut(i).fill(0.0);
            n.hcc.column_mut(i).fill(0.0);
            n.hcc[(i, i)] = 1.0;
            n.gc[i] = 0.0;
            for m in n.hcj.iter_mut() {
                if let Some(b) = m.get_mut(&c) {
                    b.row_mut(3 + k).fill(0.0);
                }
            }
        }
        Ok(n)
    }

    /// Reduced camera system `S` and right-hand side for damping `lambda`.
    fn reduce(&self, n: &Normal, lambda: f64) -> Option<(DMatrix<f64>, DVector<f64>, Vec<DMatrix<f64>>)> {
        let damp = |h: &DMatrix<f64>| {
            let mut d = h.clone();
            for i in 0..d.nrows() {
                d[(i, i)] += lambda * d[(i, i)].max(1e-9) + 1e-12;
            }
            d
        };
        let mut s = damp(&n.hcc);
        let mut rhs = -n.gc.clone();
        let mut inv = Vec::with_capacity(n.hjj.len());
        for j in 0..n.hjj.len() {
            let hj = damp(&n.hjj[j]);
            let hi = hj.cholesky()?.inverse();
            let blocks: Vec<(&usize, &DMatrix<f64>)> = n.hcj[j].iter().collect();
            for (a, ba) in &blocks {
                let t = *ba * &hi;
                let mut r = rhs.rows_mut(**a * 6, 6);
                r += &t * &n.gj[j];
                for (b, bb) in &blocks {
                    let mut blk = s.view_mut((**a * 6, **b * 6), (6, 6));
                    blk -= &t * bb.transpose();
                }
            }
            inv.push(hi);
        }
        Some((s, rhs, inv))
    }

    fn step(&self, st: &State, n: &Normal, lambda: f64) -> Option<State> {
        let (s, rhs, inv) = self.reduce(n, lambda)?;
        let dc = if s.nrows() > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
        let mut out = st.clone();
        for (id, c) in &self.cams {
            let d = Vector6::from_iterator(dc.rows(c * 6, 6).iter().copied());
            let v = out.views.get_mut(id).unwrap();
            v.rotation = so3::orthonormalize(&(so3::exp(&d.fixed_rows::<3>(0).into_owned()) * v.rotation));
            v.translation += d.fixed_rows::<3>(3);
        }
        let np = st.points.len();
        for j in 0..n.hjj.len() {
            let mut g = -n.gj[j].clone();
            for (c, b) in &n.hcj[j] {
                g -= b.transpose() * dc.rows(c * 6, 6);
            }
            let dj = &inv[j] * g;
            if j < np {
                out.points[j] += Vector3::new(dj[0], dj[1], dj[2]);
            } else {
                let l = &mut out.lines[j - np];
                *l = OrthoLine::new(l.theta + Vector3::new(dj[0], dj[1], dj[2]), l.rho + dj[3]);
            }
        }
        Some(out)
    }

    fn min_eigen_ratio(&self, n: &Normal) -> Option<f64> {
        let (s, _, _) = self.reduce(n, 0.0)?;
        if s.nrows() == 0 {
            return None;
        }
        let e = s.symmetric_eigen().eigenvalues;
        let max = e.max();
        (max > 0.0).then(|| e.min() / max)
    }
}

/// Runs LM on the given subset of the map and writes the result back.
/// When `rank_check` is set, the report includes the conditioning of the
/// reduced camera system.
pub fn bundle_adjust(
    map: &mut Map,
    obs: &ObservationSet,
    problem: &BaProblem,
    opts: &BaOptions,
    rank_check: bool,
) -> Result<BaReport> {
    let cams: BTreeMap<u32, usize> = problem
        .variable_views
        .iter()
        .filter(|v| map.views.contains_key(v))
        .enumerate()
        .map(|(i, v)| (*v, i))
        .collect();
    let fixed = problem
        .fixed_translation
        .and_then(|(v, k)| cams.get(&v).map(|c| (*c, k)));
    let mut st = State {
        views: map.views.clone(),
        points: problem.points.iter().map(|id| map.points[id].point).collect(),
        lines: problem.lines.iter().map(|id| map.lines[id].segment.line.to_ortho()).collect(),
    };
    let registered = |s: &Support| s.active && map.views.contains_key(&s.view_id);
    let mut p = Problem { opts, cams, fixed, points: vec![], lines: vec![], vps: vec![] };
    for (j, id) in problem.points.iter().enumerate() {
        for s in map.points[id].supports.iter().filter(|s| registered(s)) {
            if let Some(x) = keypoint_of(obs, s) {
                p.points.push(PointObs { track: j, view: s.view_id, x });
            }
        }
    }
    for (j, id) in problem.lines.iter().enumerate() {
        for s in map.lines[id].supports.iter().filter(|s| registered(s)) {
            if let Some(seg) = segment_of(obs, s) {
                p.lines.push(LineObs { track: j, view: s.view_id, start: seg.start, end: seg.end });
            }
        }
    }
    for id in &problem.vps {
        let t = &map.vps[id];
        for s in t.supports.iter().filter(|s| registered(s)) {
            let Some(img) = obs.image(s.view_id) else { continue };
            if vp_world_direction(obs, &map.views, s).is_some() {
                p.vps.push(VpObs { view: s.view_id, bearing: img.vp_bearing(s.feature_id), direction: t.direction });
            }
        }
    }

    let mut cost = p.cost(&st).ok_or(Error::OptimizationDiverged)?;
    let mut report = BaReport {
        initial_cost: cost,
        final_cost: cost,
        costs: vec![cost],
        iterations: 0,
        n_residuals: p.points.len() * 2 + p.lines.len() * 2 + p.vps.len() * 2,
        reduced_min_eigen_ratio: None,
    };
    let mut lambda = 1e-4;
    let mut normal = p.linearize(&st)?;
    for _ in 0..opts.max_iterations {
        report.iterations += 1;
        let mut accepted = false;
        for _ in 0..10 {
            if let Some(cand) = p.step(&st, &normal, lambda) {
                if let Some(c) = p.cost(&cand) {
                    if c < cost {
                        let rel = (cost - c) / cost.max(1e-300);
                        st = cand;
                        cost = c;
                        report.costs.push(c);
                        lambda = (lambda * 0.3).max(1e-12);
                        accepted = rel > opts.cost_tolerance;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
        normal = p.linearize(&st)?;
    }
    if rank_check {
        report.reduced_min_eigen_ratio = p.min_eigen_ratio(&p.linearize(&st)?);
    }
    report.final_cost = cost;

    for id in &problem.variable_views {
        if let (Some(v), Some(n)) = (map.views.get_mut(id), st.views.get(id)) {
            *v = n.clone();
        }
    }
    for (j, id) in problem.points.iter().enumerate() {
        map.points.get_mut(id).unwrap().point = st.points[j];
    }
    for (j, id) in problem.lines.iter().enumerate() {
        let t = map.lines.get_mut(id).unwrap();
        let line = st.lines[j].to_plucker()?;
        let seg = Segment3::on_line(line, &t.segment.start, &t.segment.end)?;
        t.segment = seg;
    }
    Ok(report)
}
