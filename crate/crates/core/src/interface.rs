//! The material interface: marker curve, level set, one-sided probing and
//! piecewise regularity estimators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{periodic_delta, wrap, ScalarGrid, VectorGrid};
use crate::interp::{self, Stencil};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Inside,
    Outside,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Inside => 1.0,
            Side::Outside => -1.0,
        }
    }

    pub fn of_phi(phi: f64) -> Side {
        if phi > 0.0 {
            Side::Inside
        } else {
            Side::Outside
        }
    }
}

/// Velocity evaluated at a point and a time offset `tau` from the start
/// of the current step.
pub trait VelocitySampler: Sync {
    fn velocity(&self, x: [f64; 2], tau: f64) -> [f64; 2];
}

impl<F> VelocitySampler for F
where
    F: Fn([f64; 2], f64) -> [f64; 2] + Sync,
{
    fn velocity(&self, x: [f64; 2], tau: f64) -> [f64; 2] {
        self(x, tau)
    }
}

/// Closed marker polyline, counter-clockwise, stored without wrapping so
/// that consecutive markers are close in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceCurve {
    points: Vec<[f64; 2]>,
    /// Reference parameter of each marker (initial arclength).
    params: Vec<f64>,
    /// Period of the reference parameter (initial length).
    period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveGeometry {
    pub length: f64,
    pub grad_sup: f64,
    pub grad_holder: f64,
    pub c_gamma: f64,
    pub alpha: f64,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

impl InterfaceCurve {
    /// Builds a curve from markers; parameters default to cumulative
    /// polyline arclength. Orientation is made counter-clockwise.
    pub fn from_points(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 8 {
            return Err(Error::DegenerateCurve(format!(
                "need at least 8 markers, got {}",
                points.len()
            )));
        }
        let mut points = points;
        let mut area = 0.0;
        for i in 0..points.len() {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            area += cross(a, b);
        }
        if area < 0.0 {
            points.reverse();
        }
        let m = points.len();
        let mut params = Vec::with_capacity(m);
        let mut s = 0.0;
        for i in 0..m {
            params.push(s);
            s += norm(sub(points[(i + 1) % m], points[i]));
        }
        let c = Self {
            points,
            params,
            period: s,
        };
        c.validate()?;
        Ok(c)
    }

    /// Samples a parametric closed curve `g(t)`, `t` in `[0, 1)`, and
    /// reparameterizes the markers to uniform arclength.
    pub fn from_parametric(m: usize, g: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let fine = 16 * m;
        let pts: Vec<[f64; 2]> = (0..fine).map(|k| g(k as f64 / fine as f64)).collect();
        let mut cum = vec![0.0; fine + 1];
        for k in 0..fine {
            cum[k + 1] = cum[k] + norm(sub(pts[(k + 1) % fine], pts[k]));
        }
        let total = cum[fine];
        // Invert arclength on the fine polyline, then evaluate g exactly.
        let mut out = Vec::with_capacity(m);
        let mut k = 0;
        for i in 0..m {
            let target = total * i as f64 / m as f64;
            while cum[k + 1] < target {
                k += 1;
            }
            let frac = (target - cum[k]) / (cum[k + 1] - cum[k]).max(1e-300);
            out.push(g((k as f64 + frac) / fine as f64));
        }
        Self::from_points(out)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Marker position wrapped into the box `[0, l)^2`.
    pub fn wrapped(&self, i: usize, l: f64) -> [f64; 2] {
        [wrap(self.points[i][0], l), wrap(self.points[i][1], l)]
    }

    fn param_gap(&self, i: usize, j: usize) -> f64 {
        let d = (self.params[j] - self.params[i]).rem_euclid(self.period);
        d.min(self.period - d)
    }

    fn forward_param_step(&self, i: usize) -> f64 {
        let m = self.len();
        let d = self.params[(i + 1) % m] - self.params[i];
        d.rem_euclid(self.period)
    }

    /// `d gamma / ds` by centered differences in the reference parameter.
    pub fn param_derivatives(&self) -> Vec<[f64; 2]> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let ip = (i + 1) % m;
                let im = (i + m - 1) % m;
                let ds = self.forward_param_step(i) + self.forward_param_step(im);
                let d = sub(self.points[ip], self.points[im]);
                [d[0] / ds, d[1] / ds]
            })
            .collect()
    }

    /// Unit tangents (counter-clockwise direction).
    pub fn tangents(&self) -> Vec<[f64; 2]> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let d = sub(self.points[(i + 1) % m], self.points[(i + m - 1) % m]);
                let r = norm(d);
                [d[0] / r, d[1] / r]
            })
            .collect()
    }

    /// Outward unit normals `n = (tau_2, -tau_1)`.
    pub fn normals(&self) -> Vec<[f64; 2]> {
        self.tangents().into_iter().map(|t| [t[1], -t[0]]).collect()
    }

    pub fn length(&self) -> f64 {
        let m = self.len();
        (0..m)
            .map(|i| norm(sub(self.points[(i + 1) % m], self.points[i])))
            .sum()
    }

    /// Arclength weight of each marker (half of the adjacent segments).
    pub fn marker_weights(&self) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                0.5 * (norm(sub(self.points[(i + 1) % m], self.points[i]))
                    + norm(sub(self.points[i], self.points[(i + m - 1) % m])))
            })
            .collect()
    }

    pub fn spacing_ratio(&self) -> f64 {
        let m = self.len();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..m {
            let d = norm(sub(self.points[(i + 1) % m], self.points[i]));
            lo = lo.min(d);
            hi = hi.max(d);
        }
        hi / lo
    }

    /// Signed area (positive for counter-clockwise orientation).
    pub fn area(&self) -> f64 {
        let m = self.len();
        0.5 * (0..m)
            .map(|i| cross(self.points[i], self.points[(i + 1) % m]))
            .sum::<f64>()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let m = self.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for p in &self.points {
            cx += p[0];
            cy += p[1];
        }
        [cx / m as f64, cy / m as f64]
    }

    /// Checks closure, finiteness and the segment-pair intersection test.
    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self
            .points
            .iter()
            .any(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::NonFinite("interface markers"));
        }
        for i in 0..m {
            if norm(sub(self.points[(i + 1) % m], self.points[i])) == 0.0 {
                return Err(Error::DegenerateCurve(format!("repeated marker at {i}")));
            }
        }
        if let Some((i, j)) = self.find_self_intersection() {
            return Err(Error::SelfIntersection(i, j));
        }
        Ok(())
    }

    /// First pair of non-adjacent intersecting segments, if any.
    pub fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let m = self.len();
        // Bounding boxes prune most pairs.
        let boxes: Vec<[f64; 4]> = (0..m)
            .map(|i| {
                let a = self.points[i];
                let b = self.points[(i + 1) % m];
                [
                    a[0].min(b[0]),
                    a[0].max(b[0]),
                    a[1].min(b[1]),
                    a[1].max(b[1]),
                ]
            })
            .collect();
        for i in 0..m {
            for j in (i + 2)..m {
                if i == 0 && j == m - 1 {
                    continue;
                }
                let (bi, bj) = (boxes[i], boxes[j]);
                if bi[1] < bj[0] || bj[1] < bi[0] || bi[3] < bj[2] || bj[3] < bi[2] {
                    continue;
                }
                if segments_intersect(
                    self.points[i],
                    self.points[(i + 1) % m],
                    self.points[j],
                    self.points[(j + 1) % m],
                ) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Resamples the markers at uniform arclength with Catmull-Rom
    /// interpolation; reference parameters are carried along linearly.
    pub fn reparameterize(&self) -> Result<Self> {
        let m = self.len();
        let mut cum = vec![0.0; m + 1];
        for i in 0..m {
            cum[i + 1] = cum[i] + norm(sub(self.points[(i + 1) % m], self.points[i]));
        }
        let total = cum[m];
        // Unwrapped reference parameters along the loop.
        let mut par = vec![self.params[0]; m + 1];
        for i in 0..m {
            par[i + 1] = par[i] + self.forward_param_step(i);
        }
        // The unwrapped loop is continuous, so indices simply cycle.
        let p = |k: i64| -> [f64; 2] { self.points[k.rem_euclid(m as i64) as usize] };
        let mut pts = Vec::with_capacity(m);
        let mut params = Vec::with_capacity(m);
        let mut k = 0usize;
        for i in 0..m {
            let target = total * i as f64 / m as f64;
            while cum[k + 1] < target {
                k += 1;
            }
            let t = (target - cum[k]) / (cum[k + 1] - cum[k]);
            let (p0, p1, p2, p3) = (
                p(k as i64 - 1),
                p(k as i64),
                p(k as i64 + 1),
                p(k as i64 + 2),
            );
            let t2 = t * t;
            let t3 = t2 * t;
            let c = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b
                    + (-a + c) * t
                    + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2
                    + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            pts.push([c(p0[0], p1[0], p2[0], p3[0]), c(p0[1], p1[1], p2[1], p3[1])]);
            params.push((par[k] + t * (par[k + 1] - par[k])).rem_euclid(self.period));
        }
        let out = Self {
            points: pts,
            params,
            period: self.period,
        };
        out.validate()?;
        Ok(out)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Touching counts: non-adjacent segments must stay apart.
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Length, Lipschitz and Hoelder norms of `d gamma/ds` and the chord-arc
/// constant `c_gamma`, all by full pair enumeration.
pub fn geometry(curve: &InterfaceCurve, alpha: f64) -> Result<CurveGeometry> {
    curve.validate()?;
    let m = curve.len();
    let d = curve.param_derivatives();
    let grad_sup = d.iter().map(|&v| norm(v)).fold(0.0, f64::max);
    let pts = curve.points();
    let (holder, cg) = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut h: f64 = 0.0;
            let mut c: f64 = 0.0;
            for j in (i + 1)..m {
                let ds = curve.param_gap(i, j);
                if ds <= 0.0 {
                    continue;
                }
                h = h.max(norm(sub(d[i], d[j])) / ds.powf(alpha));
                c = c.max(ds / norm(sub(pts[i], pts[j])));
            }
            (h, c)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(CurveGeometry {
        length: curve.length(),
        grad_sup,
        grad_holder: holder,
        c_gamma: cg,
        alpha,
    })
}

/// `(1 + x)^3`, the fixed polynomial of the regularity functional.
pub fn frak_poly(x: f64) -> f64 {
    (1.0 + x).powi(3)
}

/// `(1 + |C|) (1 + ||grad gamma||_inf + c_gamma)^3 ||grad gamma||_{C^alpha}`.
pub fn frak_p(g: &CurveGeometry) -> f64 {
    (1.0 + g.length) * frak_poly(g.grad_sup + g.c_gamma) * g.grad_holder
}

/// Level set with `D = {phi > 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub phi: ScalarGrid,
}

impl LevelSet {
    pub fn new(phi: ScalarGrid) -> Self {
        Self { phi }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        interp::interpolate(&self.phi, x)
    }

    pub fn side(&self, x: [f64; 2]) -> Side {
        Side::of_phi(self.value(x))
    }

    /// Sides of the grid nodes.
    pub fn node_sides(&self) -> Vec<Side> {
        self.phi.values().iter().map(|&v| Side::of_phi(v)).collect()
    }

    /// Fourth-order centered-difference gradient.
    pub fn gradient(&self) -> VectorGrid {
        fd4_gradient(&self.phi)
    }
}

/// Fourth-order centered differences on the periodic grid.
pub fn fd4_gradient(g: &ScalarGrid) -> VectorGrid {
    let n = g.n();
    let h = g.h();
    let v = g.values();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    let w = |k: usize, d: i64| (k as i64 + d).rem_euclid(n as i64) as usize;
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            a[idx] = (-v[w(i, 2) * n + j] + 8.0 * v[w(i, 1) * n + j] - 8.0 * v[w(i, -1) * n + j]
                + v[w(i, -2) * n + j])
                / (12.0 * h);
            b[idx] = (-v[i * n + w(j, 2)] + 8.0 * v[i * n + w(j, 1)] - 8.0 * v[i * n + w(j, -1)]
                + v[i * n + w(j, -2)])
                / (12.0 * h);
        }
    }
    VectorGrid {
        c: [
            ScalarGrid::from_values(n, g.l(), a).expect("size"),
            ScalarGrid::from_values(n, g.l(), b).expect("size"),
        ],
    }
}

/// Classifies points by the level set, reporting `None` inside the
/// ambiguity band `|phi| < margin |grad phi|`.
pub struct SideClassifier<'a> {
    levelset: &'a LevelSet,
    grad: VectorGrid,
    margin: f64,
}

impl<'a> SideClassifier<'a> {
    pub fn new(levelset: &'a LevelSet, margin: f64) -> Self {
        Self {
            levelset,
            grad: levelset.gradient(),
            margin,
        }
    }

    pub fn classify(&self, x: [f64; 2]) -> Option<Side> {
        let s = Stencil::new(self.levelset.phi.n(), self.levelset.phi.l(), x);
        let phi = s.apply(self.levelset.phi.values());
        if self.margin > 0.0 {
            let g = s
                .apply(self.grad.c[0].values())
                .hypot(s.apply(self.grad.c[1].values()));
            if phi.abs() < self.margin * g {
                return None;
            }
        }
        Some(Side::of_phi(phi))
    }

    /// Signed distance estimate `phi / |grad phi|`.
    pub fn distance(&self, x: [f64; 2]) -> f64 {
        let s = Stencil::new(self.levelset.phi.n(), self.levelset.phi.l(), x);
        let phi = s.apply(self.levelset.phi.values());
        let g = s
            .apply(self.grad.c[0].values())
            .hypot(s.apply(self.grad.c[1].values()));
        phi / g.max(1e-300)
    }
}

/// Evaluates a grid field using only nodes on a requested side of the
/// interface: plain bicubic when the whole stencil is same-side, a local
/// weighted least-squares quadratic otherwise.
pub struct SidedSampler<'a> {
    field: &'a ScalarGrid,
    sides: &'a [Side],
}

impl<'a> SidedSampler<'a> {
    pub fn new(field: &'a ScalarGrid, sides: &'a [Side]) -> Self {
        Self { field, sides }
    }

    pub fn sample(&self, x: [f64; 2], side: Side) -> f64 {
        let n = self.field.n();
        let l = self.field.l();
        let st = Stencil::new(n, l, x);
        if st.nodes().all(|k| self.sides[k] == side) {
            return st.apply(self.field.values());
        }
        one_sided_fit(self.field, self.sides, x, side)
    }
}

/// Weighted least-squares polynomial fit through same-side nodes near `x`.
pub fn one_sided_fit(field: &ScalarGrid, sides: &[Side], x: [f64; 2], side: Side) -> f64 {
    let rows = same_side_rows(field, sides, x, side, 3, 3.5, 1.5);
    for &terms in &[6usize, 3, 1] {
        if rows.len() < 2 * terms && terms > 1 {
            continue;
        }
        if let Some(c) = weighted_lsq(&rows, terms) {
            return c[0];
        }
    }
    // No same-side node at all: fall back to the plain interpolant.
    interp::interpolate(field, x)
}

/// Monomials up to degree three in cell units.
fn cubic_basis(px: f64, py: f64) -> [f64; 10] {
    [1.0, px, py, px * px, px * py, py * py, px * px * px, px * px * py, px * py * py, py * py * py]
}

/// Same-side nodes within `radius` cells of `x`, with Gaussian weights of
/// width `width` cells.
fn same_side_rows(
    field: &ScalarGrid,
    sides: &[Side],
    x: [f64; 2],
    side: Side,
    reach: i64,
    radius: f64,
    width: f64,
) -> Vec<([f64; 10], f64, f64)> {
    let n = field.n();
    let l = field.l();
    let h = field.h();
    let v = field.values();
    let ci = (x[0] / h).floor() as i64;
    let cj = (x[1] / h).floor() as i64;
    let mut rows = Vec::with_capacity(((2 * reach + 2) * (2 * reach + 2)) as usize);
    for di in -reach..=reach + 1 {
        for dj in -reach..=reach + 1 {
            let ii = (ci + di).rem_euclid(n as i64) as usize;
            let jj = (cj + dj).rem_euclid(n as i64) as usize;
            let k = ii * n + jj;
            if sides[k] != side {
                continue;
            }
            let px = periodic_delta((ci + di) as f64 * h, x[0], l) / h;
            let py = periodic_delta((cj + dj) as f64 * h, x[1], l) / h;
            let d2 = px * px + py * py;
            if d2 > radius * radius {
                continue;
            }
            let w = (-0.5 * d2 / (width * width)).exp();
            rows.push((cubic_basis(px, py), v[k], w));
        }
    }
    rows
}

/// One-sided value and gradient of a piecewise smooth field at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidedGradient {
    pub value: f64,
    pub grad: [f64; 2],
    /// Gap between the cubic and quadratic fits of the gradient.
    pub error: f64,
}

/// Fits cubic and quadratic polynomials through the `side` nodes around
/// `x` (within `radius_cells`) and differentiates them there. Meant for fields that are continuous
/// with a kink across the interface, where spectral derivatives ring.
pub fn one_sided_gradient(
    field: &ScalarGrid,
    sides: &[Side],
    x: [f64; 2],
    side: Side,
    radius_cells: f64,
) -> Option<SidedGradient> {
    let reach = radius_cells.ceil() as i64;
    let rows = same_side_rows(field, sides, x, side, reach, radius_cells, 0.5 * radius_cells);
    if rows.len() < 20 {
        return None;
    }
    let cubic = weighted_lsq(&rows, 10)?;
    let quad = weighted_lsq(&rows, 6)?;
    let h = field.h();
    let grad = [cubic[1] / h, cubic[2] / h];
    let error = (cubic[1] - quad[1]).hypot(cubic[2] - quad[2]) / h;
    Some(SidedGradient { value: cubic[0], grad, error })
}

/// Solves the weighted normal equations for the first `terms` basis
/// functions.
fn weighted_lsq(rows: &[([f64; 10], f64, f64)], terms: usize) -> Option<[f64; 10]> {
    if rows.is_empty() {
        return None;
    }
    let mut a = [[0.0; 11]; 10];
    for (basis, val, w) in rows {
        for r in 0..terms {
            for c in 0..terms {
                a[r][c] += w * basis[r] * basis[c];
            }
            a[r][10] += w * basis[r] * val;
        }
    }
    let scale = (0..terms).map(|r| a[r][r]).fold(0.0, f64::max);
    for col in 0..terms {
        let piv = (col..terms).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        for r in 0..terms {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..terms {
                    a[r][c] -= f * a[col][c];
                }
                a[r][10] -= f * a[col][10];
            }
        }
    }
    let mut out = [0.0; 10];
    for r in 0..terms {
        out[r] = a[r][10] / a[r][r];
    }
    Some(out)
}

/// One-sided limits of a field at a marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSample {
    pub marker: usize,
    pub field: String,
    /// `g_+ - g_-`, the `+` side being the outward normal side.
    pub jump: f64,
    pub average: f64,
    pub plus: f64,
    pub minus: f64,
    pub error: f64,
    pub valid: bool,
    pub radii_used: usize,
}

/// Richardson extrapolation to `r = 0` under the model `g0 + c r^alpha`.
fn extrapolate(ra: f64, ga: f64, rb: f64, gb: f64, alpha: f64) -> f64 {
    if ga == gb {
        return ga;
    }
    let (pa, pb) = (ra.powf(alpha), rb.powf(alpha));
    (gb * pa - ga * pb) / (pa - pb)
}

fn one_side_limit(vals: &[(f64, f64)], alpha: f64) -> Option<(f64, f64)> {
    match vals.len() {
        0 | 1 => None,
        2 => {
            let e = extrapolate(vals[0].0, vals[0].1, vals[1].0, vals[1].1, alpha);
            Some((e, (e - vals[1].1).abs()))
        }
        _ => {
            let e1 = extrapolate(vals[0].0, vals[0].1, vals[1].0, vals[1].1, alpha);
            let e2 = extrapolate(vals[1].0, vals[1].1, vals[2].0, vals[2].1, alpha);
            Some((e2, (e2 - e1).abs()))
        }
    }
}

/// Probes `g` at `gamma +- r n` for `r` in `{r0, r0/2, r0/4}` and
/// extrapolates both one-sided limits.
///
/// `eval(x, side)` evaluates the field on the given side; `classify(x)`
/// reports the side of a probe point. A radius whose probes land on the
/// wrong side is dropped; fewer than two radii mark the sample invalid.
#[allow(clippy::too_many_arguments)]
pub fn jump_average(
    field: &str,
    eval: &dyn Fn([f64; 2], Side) -> f64,
    classify: &dyn Fn([f64; 2]) -> Option<Side>,
    marker: usize,
    point: [f64; 2],
    normal: [f64; 2],
    r0: f64,
    alpha: f64,
) -> JumpSample {
    let mut plus = Vec::with_capacity(3);
    let mut minus = Vec::with_capacity(3);
    for k in 0..3 {
        let r = r0 / f64::powi(2.0, k);
        let xp = [point[0] + r * normal[0], point[1] + r * normal[1]];
        let xm = [point[0] - r * normal[0], point[1] - r * normal[1]];
        if classify(xp) != Some(Side::Outside) || classify(xm) != Some(Side::Inside) {
            continue;
        }
        plus.push((r, eval(xp, Side::Outside)));
        minus.push((r, eval(xm, Side::Inside)));
    }
    let used = plus.len();
    match (one_side_limit(&plus, alpha), one_side_limit(&minus, alpha)) {
        (Some((gp, ep)), Some((gm, em))) => JumpSample {
            marker,
            field: field.to_string(),
            jump: gp - gm,
            average: 0.5 * (gp + gm),
            plus: gp,
            minus: gm,
            error: ep + em,
            valid: (gp - gm).is_finite() && (ep + em).is_finite(),
            radii_used: used,
        },
        _ => JumpSample {
            marker,
            field: field.to_string(),
            jump: f64::NAN,
            average: f64::NAN,
            plus: f64::NAN,
            minus: f64::NAN,
            error: f64::NAN,
            valid: false,
            radii_used: used,
        },
    }
}

/// Result of a sampled Hoelder seminorm estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub value: f64,
    pub pairs_evaluated: usize,
    pub budget: usize,
    pub skipped: usize,
}

/// Parameters of the pair sampler.
#[derive(Debug, Clone, Copy)]
pub struct PairSampling {
    pub alpha: f64,
    pub min_dist: f64,
    pub cutoff: f64,
    pub budget: usize,
}

/// Max of `|g(x) - g(y)| / |x - y|^alpha` over sampled pairs accepted by
/// `accept`, with `|x - y|` log-stratified in `[min_dist, cutoff]`. Half
/// the base points are drawn uniformly in the box `[lo, hi]`, half near
/// randomly chosen `anchors`.
pub fn sampled_holder<R: Rng>(
    eval: &(dyn Fn([f64; 2]) -> f64 + Sync),
    accept: &(dyn Fn([f64; 2]) -> bool + Sync),
    anchors: &[[f64; 2]],
    bbox: [f64; 4],
    cfg: PairSampling,
    rng: &mut R,
) -> HolderEstimate {
    let bins = 8usize;
    let (lmin, lmax) = (
        cfg.min_dist.ln(),
        cfg.cutoff.max(cfg.min_dist * 1.0001).ln(),
    );
    let mut pairs = Vec::with_capacity(cfg.budget);
    for k in 0..cfg.budget {
        let bin = k % bins;
        let t = (bin as f64 + rng.gen::<f64>()) / bins as f64;
        let d = (lmin + t * (lmax - lmin)).exp();
        let x = if k % 2 == 0 || anchors.is_empty() {
            [
                rng.gen_range(bbox[0]..bbox[1]),
                rng.gen_range(bbox[2]..bbox[3]),
            ]
        } else {
            let a = anchors[rng.gen_range(0..anchors.len())];
            // Log-uniform radius so that base points land close to an
            // anchor often enough to resolve a cusp sitting there.
            let r0 = cfg.min_dist / 16.0;
            let r = r0 * (cfg.cutoff / r0).max(1.0).powf(rng.gen::<f64>());
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            [a[0] + r * th.cos(), a[1] + r * th.sin()]
        };
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let y = [x[0] + d * th.cos(), x[1] + d * th.sin()];
        pairs.push((x, y, d));
    }
    let (value, evaluated, skipped) = pairs
        .par_iter()
        .map(|&(x, y, d)| {
            if !(accept(x) && accept(y)) {
                return (0.0, 0usize, 1usize);
            }
            let q = (eval(x) - eval(y)).abs() / d.powf(cfg.alpha);
            (q, 1, 0)
        })
        .reduce(|| (0.0, 0, 0), |a, b| (a.0.max(b.0), a.1 + b.1, a.2 + b.2));
    HolderEstimate {
        value,
        pairs_evaluated: evaluated,
        budget: cfg.budget,
        skipped,
    }
}

/// Box around the curve expanded by `pad`.
pub fn curve_bbox(curve: &InterfaceCurve, pad: f64) -> [f64; 4] {
    let mut b = [
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    ];
    for p in curve.points() {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].max(p[0]);
        b[2] = b[2].min(p[1]);
        b[3] = b[3].max(p[1]);
    }
    [b[0] - pad, b[1] + pad, b[2] - pad, b[3] + pad]
}

/// Piecewise Hoelder seminorm of `g` on one side of the interface.
///
/// Points closer to the interface than `margin` (in the level-set
/// distance) are skipped as ambiguous.
#[allow(clippy::too_many_arguments)]
pub fn holder_pw<R: Rng>(
    eval: &(dyn Fn([f64; 2], Side) -> f64 + Sync),
    classifier: &SideClassifier<'_>,
    curve: &InterfaceCurve,
    side: Side,
    alpha: f64,
    cutoff: f64,
    min_dist: f64,
    budget: usize,
    rng: &mut R,
) -> HolderEstimate {
    let anchors = curve.points().to_vec();
    let bbox = match side {
        Side::Inside => curve_bbox(curve, 0.0),
        Side::Outside => curve_bbox(curve, cutoff),
    };
    let cfg = PairSampling {
        alpha,
        min_dist,
        cutoff,
        budget,
    };
    sampled_holder(
        &|x| eval(x, side),
        &|x| classifier.classify(x) == Some(side),
        &anchors,
        bbox,
        cfg,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetMetrics {
    pub grad_inf: f64,
    pub grad_holder: f64,
    pub ell: f64,
}

/// `|grad phi|_inf` over the markers, the sampled Hoelder seminorm of
/// `grad phi` in a band of width `0.2 L` around the curve, and
/// `ell = min(1, (|grad phi|_inf / ||grad phi||_{C^alpha})^(1/alpha))`.
pub fn levelset_metrics<R: Rng>(
    levelset: &LevelSet,
    curve: &InterfaceCurve,
    alpha: f64,
    budget: usize,
    rng: &mut R,
) -> Result<LevelSetMetrics> {
    let l = levelset.phi.l();
    let h = levelset.phi.h();
    let grad = levelset.gradient();
    let grad_inf = curve
        .points()
        .iter()
        .map(|&p| {
            let g = interp::interpolate_vector(&grad, p);
            norm(g)
        })
        .fold(f64::INFINITY, f64::min);
    if !(grad_inf >= 1e-6) {
        return Err(Error::DegenerateLevelSet(format!(
            "|grad phi|_inf = {grad_inf:.3e}"
        )));
    }
    let classifier = SideClassifier::new(levelset, 0.0);
    let band = 0.1 * l;
    let accept = |x: [f64; 2]| classifier.distance(x).abs() <= band;
    let cfg = PairSampling {
        alpha,
        min_dist: 4.0 * h,
        cutoff: band,
        budget,
    };
    let bbox = curve_bbox(curve, band);
    let anchors = curve.points().to_vec();
    let mut holder: f64 = 0.0;
    for c in 0..2 {
        let comp = &grad.c[c];
        let est = sampled_holder(
            &|x| interp::interpolate(comp, x),
            &accept,
            &anchors,
            bbox,
            cfg,
            rng,
        );
        holder = holder.max(est.value);
    }
    let ell = if holder <= 0.0 {
        1.0
    } else {
        (grad_inf / holder).powf(1.0 / alpha).min(1.0)
    };
    Ok(LevelSetMetrics {
        grad_inf,
        grad_holder: holder,
        ell,
    })
}

/// Largest level-set distance of any marker from the zero set.
pub fn curve_levelset_gap(levelset: &LevelSet, curve: &InterfaceCurve) -> f64 {
    let c = SideClassifier::new(levelset, 0.0);
    curve
        .points()
        .iter()
        .map(|&p| c.distance(p).abs())
        .fold(0.0, f64::max)
}

/// RK4 step of a single point through the sampler over `[0, dt]`.
#[inline]
pub fn rk4_point(field: &dyn VelocitySampler, x: [f64; 2], dt: f64) -> [f64; 2] {
    let h2 = 0.5 * dt;
    let k1 = field.velocity(x, 0.0);
    let k2 = field.velocity([x[0] + h2 * k1[0], x[1] + h2 * k1[1]], h2);
    let k3 = field.velocity([x[0] + h2 * k2[0], x[1] + h2 * k2[1]], h2);
    let k4 = field.velocity([x[0] + dt * k3[0], x[1] + dt * k3[1]], dt);
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Backward RK4 from `x` at `tau = dt` to the foot at `tau = 0`.
#[inline]
pub fn rk4_backtrace(field: &dyn VelocitySampler, x: [f64; 2], dt: f64) -> [f64; 2] {
    let h2 = 0.5 * dt;
    let k1 = field.velocity(x, dt);
    let k2 = field.velocity([x[0] - h2 * k1[0], x[1] - h2 * k1[1]], h2);
    let k3 = field.velocity([x[0] - h2 * k2[0], x[1] - h2 * k2[1]], h2);
    let k4 = field.velocity([x[0] - dt * k3[0], x[1] - dt * k3[1]], 0.0);
    [
        x[0] - dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] - dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Advances the markers by RK4; reparameterizes when the spacing ratio
/// exceeds 3. Rejects steps moving any marker farther than `max_disp`.
pub fn advect_markers(
    curve: &InterfaceCurve,
    field: &dyn VelocitySampler,
    dt: f64,
    max_disp: f64,
) -> Result<InterfaceCurve> {
    let pts: Vec<[f64; 2]> = curve
        .points()
        .par_iter()
        .map(|&p| rk4_point(field, p, dt))
        .collect();
    let mut worst: f64 = 0.0;
    for (a, b) in pts.iter().zip(curve.points()) {
        worst = worst.max(norm(sub(*a, *b)));
    }
    if worst > max_disp {
        return Err(Error::CflViolation {
            displacement: worst,
            limit: max_disp,
        });
    }
    let out = InterfaceCurve {
        points: pts,
        params: curve.params.clone(),
        period: curve.period,
    };
    out.validate()?;
    if out.spacing_ratio() > 3.0 {
        out.reparameterize()
    } else {
        Ok(out)
    }
}

/// Semi-Lagrangian level-set update `phi'(x) = phi(foot(x))`.
pub fn advect_levelset(
    levelset: &LevelSet,
    field: &dyn VelocitySampler,
    dt: f64,
    max_disp: f64,
) -> Result<LevelSet> {
    let phi = &levelset.phi;
    let n = phi.n();
    let h = phi.h();
    let res: Vec<(f64, f64)> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let x = [(idx / n) as f64 * h, (idx % n) as f64 * h];
            let foot = rk4_backtrace(field, x, dt);
            if foot == x {
                // Avoid floor() round-off picking the neighbouring cell.
                return (phi.values()[idx], 0.0);
            }
            (interp::interpolate(phi, foot), norm(sub(foot, x)))
        })
        .collect();
    let worst = res.iter().map(|r| r.1).fold(0.0, f64::max);
    if worst > max_disp {
        return Err(Error::CflViolation {
            displacement: worst,
            limit: max_disp,
        });
    }
    let values = res.into_iter().map(|r| r.0).collect();
    Ok(LevelSet {
        phi: ScalarGrid::from_values(n, phi.l(), values)?,
    })
}
