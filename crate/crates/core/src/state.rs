//! Simulation state: grid velocity, the particle cloud carrying `f(rho)`
//! and Jacobians, the interface, and the grid density reconstruction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::{wrap, ScalarGrid, VectorGrid};
use crate::interface::{InterfaceCurve, LevelSet, Side, SidedSampler, VelocitySampler};
use crate::interp::{wrap_index, Stencil};
use crate::spectral::Spectral;

/// Lagrangian particles, stored as parallel arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    /// Initial lattice position.
    pub label: Vec<[f64; 2]>,
    /// Current position, unwrapped.
    pub pos: Vec<[f64; 2]>,
    pub fval: Vec<f64>,
    pub side: Vec<Side>,
    pub jac: Vec<f64>,
    pub rho0: Vec<f64>,
    /// `f^{-1}(fval)`, kept in sync with `fval`.
    pub rho: Vec<f64>,
    /// Lattice cell area carried by each particle.
    pub volume: f64,
}

impl ParticleCloud {
    /// Seeds `per_axis` particles per grid cell and axis, at cell-centred
    /// lattice positions. `rho0` gives the initial density and `side` the
    /// patch membership of a point.
    pub fn seed(
        n: usize,
        l: f64,
        per_axis: usize,
        laws: &ConstitutiveLaws,
        rho0: impl Fn([f64; 2]) -> f64 + Sync,
        side: impl Fn([f64; 2]) -> Side + Sync,
    ) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::InvalidInput("per_axis must be positive".into()));
        }
        let m = n * per_axis;
        let dx = l / m as f64;
        let seeded: Vec<([f64; 2], f64, f64, Side)> = (0..m * m)
            .into_par_iter()
            .map(|k| {
                let y = [((k / m) as f64 + 0.5) * dx, ((k % m) as f64 + 0.5) * dx];
                let r = rho0(y);
                let f = laws.f_of_rho(r)?;
                // Round-trip so that rho and fval agree to the last bit.
                let r = laws.f_inverse_from(f, Some(r))?;
                Ok((y, r, f, side(y)))
            })
            .collect::<Result<_>>()?;
        let count = seeded.len();
        let mut cloud = Self {
            label: Vec::with_capacity(count),
            pos: Vec::with_capacity(count),
            fval: Vec::with_capacity(count),
            side: Vec::with_capacity(count),
            jac: vec![1.0; count],
            rho0: Vec::with_capacity(count),
            rho: Vec::with_capacity(count),
            volume: dx * dx,
        };
        for (y, r, f, s) in seeded {
            cloud.label.push(y);
            cloud.pos.push(y);
            cloud.fval.push(f);
            cloud.side.push(s);
            cloud.rho0.push(r);
            cloud.rho.push(r);
        }
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Lagrangian mass, constant by construction.
    pub fn total_mass(&self) -> f64 {
        self.rho0.iter().sum::<f64>() * self.volume
    }

    /// Recomputes the cached densities from the f-values, warm-starting
    /// from the previous density.
    pub fn refresh_rho(&mut self, laws: &ConstitutiveLaws) -> Result<()> {
        let fval = &self.fval;
        self.rho
            .par_iter_mut()
            .zip(fval.par_iter())
            .try_for_each(|(r, &f)| -> Result<()> {
                *r = laws.f_inverse_from(f, Some(*r))?;
                Ok(())
            })
    }

    /// Checks `J > 0`, finiteness and the f-range.
    pub fn check(&self, laws: &ConstitutiveLaws) -> Result<()> {
        let [lo, hi] = laws.f_range();
        for k in 0..self.len() {
            let j = self.jac[k];
            if !(j.is_finite() && j > 0.0) {
                return Err(Error::NonFinite("particle Jacobian"));
            }
            let p = self.pos[k];
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::NonFinite("particle position"));
            }
            let f = self.fval[k];
            if !f.is_finite() {
                return Err(Error::NonFinite("particle f-value"));
            }
            if f < lo || f > hi {
                return Err(Error::OutOfRange { value: f, lo, hi });
            }
        }
        Ok(())
    }

    /// Fraction of particles whose label disagrees with the level set.
    pub fn side_mismatch(&self, levelset: &LevelSet) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let bad: usize = self
            .pos
            .par_iter()
            .zip(self.side.par_iter())
            .filter(|(&p, &s)| levelset.side(p) != s)
            .count();
        bad as f64 / self.len() as f64
    }
}

/// Grid reconstruction of the particle f-values and the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub fval: ScalarGrid,
    pub rho: ScalarGrid,
}

const MLS_REACH: i64 = 3;
const MLS_TAPS: usize = (2 * MLS_REACH + 1) as usize;

/// Moving-least-squares reconstruction on the grid. At each node a linear
/// polynomial is fitted to the f-values of same-side particles within
/// `3h`, with Gaussian weights `exp(-d^2/h^2)`; the density is `f^{-1}` of
/// the fitted value. Particles never contribute across the interface.
pub fn density_on_grid(
    particles: &ParticleCloud,
    levelset: &LevelSet,
    laws: &ConstitutiveLaws,
) -> Result<Reconstruction> {
    let phi = &levelset.phi;
    let n = phi.n();
    let l = phi.l();
    let inv_h = n as f64 / l;
    let sides = levelset.node_sides();
    let reach2 = (MLS_REACH * MLS_REACH) as f64;

    let threads = rayon::current_num_threads().max(1);
    let chunk = particles.len().div_ceil(threads).max(1);
    let idx: Vec<usize> = (0..particles.len()).collect();
    let moments = idx
        .par_chunks(chunk)
        .map(|ks| {
            let mut acc = vec![[0.0f64; 9]; n * n];
            for &k in ks {
                let p = particles.pos[k];
                let sx = wrap(p[0], l) * inv_h;
                let sy = wrap(p[1], l) * inv_h;
                let rx = sx.round();
                let ry = sy.round();
                let fx = sx - rx;
                let fy = sy - ry;
                let ex = gauss_taps(fx);
                let ey = gauss_taps(fy);
                let i0 = wrap_index(rx as i64 - MLS_REACH, n);
                let j0 = wrap_index(ry as i64 - MLS_REACH, n);
                let mut cols = [0usize; MLS_TAPS];
                for (b, c) in cols.iter_mut().enumerate() {
                    let j = j0 + b;
                    *c = if j >= n { j - n } else { j };
                }
                let f = particles.fval[k];
                let s = particles.side[k];
                for a in 0..MLS_TAPS {
                    let dx = fx - (a as f64 - MLS_REACH as f64);
                    let i = i0 + a;
                    let row = if i >= n { i - n } else { i } * n;
                    for b in 0..MLS_TAPS {
                        let dy = fy - (b as f64 - MLS_REACH as f64);
                        if dx * dx + dy * dy > reach2 {
                            continue;
                        }
                        let node = row + cols[b];
                        if sides[node] != s {
                            continue;
                        }
                        let w = ex[a] * ey[b];
                        let m = &mut acc[node];
                        m[0] += w;
                        m[1] += w * dx;
                        m[2] += w * dy;
                        m[3] += w * dx * dx;
                        m[4] += w * dx * dy;
                        m[5] += w * dy * dy;
                        m[6] += w * f;
                        m[7] += w * f * dx;
                        m[8] += w * f * dy;
                    }
                }
            }
            acc
        })
        .reduce_with(|mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for c in 0..9 {
                    x[c] += y[c];
                }
            }
            a
        })
        .unwrap_or_else(|| vec![[0.0; 9]; n * n]);

    let fitted: Vec<f64> = moments
        .par_iter()
        .enumerate()
        .map(|(node, m)| {
            if m[0] <= 0.0 {
                return Err(Error::ParticleDepletion(node));
            }
            Ok(solve_linear_fit(m))
        })
        .collect::<Result<_>>()?;
    let rho: Vec<f64> = fitted
        .par_iter()
        .map(|&y| laws.f_inverse(y))
        .collect::<Result<_>>()?;
    Ok(Reconstruction {
        fval: ScalarGrid::from_values(n, l, fitted)?,
        rho: ScalarGrid::from_values(n, l, rho)?,
    })
}

/// `exp(-(f - o)^2)` for the integer offsets `o = -3..=3`, by recurrence:
/// consecutive ratios are `exp(2 (f - o) - 1)`.
#[inline]
fn gauss_taps(f: f64) -> [f64; MLS_TAPS] {
    let mut out = [0.0; MLS_TAPS];
    let o0 = -(MLS_REACH as f64);
    out[0] = (-(f - o0) * (f - o0)).exp();
    let q = (2.0 * (f - o0) - 1.0).exp();
    let step = (-2.0f64).exp();
    let mut ratio = q;
    for t in 1..MLS_TAPS {
        out[t] = out[t - 1] * ratio;
        ratio *= step;
    }
    out
}

/// Constant term of the weighted linear fit; falls back to the weighted
/// mean when the particle offsets are nearly collinear.
fn solve_linear_fit(m: &[f64; 9]) -> f64 {
    let (s0, sx, sy, sxx, sxy, syy) = (m[0], m[1], m[2], m[3], m[4], m[5]);
    let (f0, fx, fy) = (m[6], m[7], m[8]);
    let c00 = sxx * syy - sxy * sxy;
    let c01 = sy * sxy - sx * syy;
    let c02 = sx * sxy - sy * sxx;
    let det = s0 * c00 + sx * c01 + sy * c02;
    let scale = s0 * sxx.max(1e-300) * syy.max(1e-300);
    if det.abs() <= 1e-10 * scale || !det.is_finite() {
        return f0 / s0;
    }
    (c00 * f0 + c01 * fx + c02 * fy) / det
}

/// Field sampler linear in time: `g(x, tau) = now(x) + tau * rate(x)`.
/// All components share one interpolation stencil.
#[derive(Debug, Clone)]
pub struct LinearInTime {
    pub now: Vec<ScalarGrid>,
    pub rate: Option<Vec<ScalarGrid>>,
}

impl LinearInTime {
    pub fn frozen(now: Vec<ScalarGrid>) -> Self {
        Self { now, rate: None }
    }

    /// Rate from the previous snapshot taken `dt_prev` earlier.
    pub fn from_snapshots(
        now: Vec<ScalarGrid>,
        prev: Option<(&[ScalarGrid], f64)>,
    ) -> Result<Self> {
        let rate = match prev {
            Some((p, dt_prev)) => {
                if p.len() != now.len() || dt_prev <= 0.0 {
                    return Err(Error::InvalidInput(
                        "mismatched snapshot for time extrapolation".into(),
                    ));
                }
                Some(
                    now.iter()
                        .zip(p)
                        .map(|(a, b)| a.sub(b).scale(1.0 / dt_prev))
                        .collect(),
                )
            }
            None => None,
        };
        Ok(Self { now, rate })
    }

    pub fn components(&self) -> usize {
        self.now.len()
    }

    /// True when every component vanishes identically over the whole step.
    pub fn is_zero(&self) -> bool {
        let zero = |g: &ScalarGrid| g.values().iter().all(|&v| v == 0.0);
        self.now.iter().all(zero) && self.rate.as_ref().is_none_or(|r| r.iter().all(zero))
    }

    /// Fills the first `out.len()` components at `(x, tau)`.
    #[inline]
    pub fn sample_into(&self, x: [f64; 2], tau: f64, out: &mut [f64]) {
        let g = &self.now[0];
        let st = Stencil::new(g.n(), g.l(), x);
        for (c, o) in out.iter_mut().enumerate() {
            let mut v = st.apply(self.now[c].values());
            if let Some(r) = &self.rate {
                if tau != 0.0 {
                    v += tau * st.apply(r[c].values());
                }
            }
            *o = v;
        }
    }
}

impl VelocitySampler for LinearInTime {
    fn velocity(&self, x: [f64; 2], tau: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        self.sample_into(x, tau, &mut out);
        out
    }
}

/// Advances particle positions and `log J` together by RK4. `field` must
/// carry `(u1, u2, div u)` as its first three components.
pub fn jacobian_update(particles: &mut ParticleCloud, field: &LinearInTime, dt: f64) -> Result<()> {
    jacobian_update_sided(particles, field, None, dt)
}

/// As [`jacobian_update`], with `div u` taken from each particle's own side
/// when grid node sides are given. The divergence jumps across the
/// interface, and a stencil straddling it mixes the two one-sided values.
pub fn jacobian_update_sided(
    particles: &mut ParticleCloud,
    field: &LinearInTime,
    node_sides: Option<&[Side]>,
    dt: f64,
) -> Result<()> {
    if field.components() < 3 {
        return Err(Error::InvalidInput(
            "jacobian_update needs (u1, u2, div u)".into(),
        ));
    }
    if let Some(sides) = node_sides {
        if sides.len() != field.now[2].values().len() {
            return Err(Error::InvalidInput("node sides do not match the grid".into()));
        }
    }
    let div_now = node_sides.map(|s| SidedSampler::new(&field.now[2], s));
    let div_rate = node_sides.and_then(|s| field.rate.as_ref().map(|r| SidedSampler::new(&r[2], s)));
    let sample = |x: [f64; 2], tau: f64, side: Side, out: &mut [f64; 3]| match &div_now {
        Some(now) => {
            let mut v = [0.0; 2];
            field.sample_into(x, tau, &mut v);
            let mut d = now.sample(x, side);
            if let (Some(r), true) = (&div_rate, tau != 0.0) {
                d += tau * r.sample(x, side);
            }
            *out = [v[0], v[1], d];
        }
        None => field.sample_into(x, tau, out),
    };
    let h2 = 0.5 * dt;
    particles
        .pos
        .par_iter_mut()
        .zip(particles.jac.par_iter_mut())
        .zip(particles.side.par_iter())
        .try_for_each(|((x, j), &side)| -> Result<()> {
            let mut k1 = [0.0; 3];
            let mut k2 = [0.0; 3];
            let mut k3 = [0.0; 3];
            let mut k4 = [0.0; 3];
            let p = *x;
            sample(p, 0.0, side, &mut k1);
            sample([p[0] + h2 * k1[0], p[1] + h2 * k1[1]], h2, side, &mut k2);
            sample([p[0] + h2 * k2[0], p[1] + h2 * k2[1]], h2, side, &mut k3);
            sample([p[0] + dt * k3[0], p[1] + dt * k3[1]], dt, side, &mut k4);
            let inc = |c: usize| dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            x[0] += inc(0);
            x[1] += inc(1);
            let nj = *j * inc(2).exp();
            if !(nj.is_finite() && nj > 0.0 && x[0].is_finite() && x[1].is_finite()) {
                return Err(Error::NonFinite("particle Jacobian"));
            }
            *j = nj;
            Ok(())
        })
}

/// A velocity-like field at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub t: f64,
    pub field: &'a VectorGrid,
}

/// Accuracy of a time difference: 2 for three snapshots, 1 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifferenceOrder {
    Second,
    First,
}

/// Time derivative of `w` at `curr.t` from up to three snapshots
/// (non-uniform Lagrange weights).
pub fn time_derivative(
    prev: Option<Snapshot>,
    curr: Snapshot,
    next: Option<Snapshot>,
) -> Result<(VectorGrid, DifferenceOrder)> {
    match (prev, next) {
        (Some(a), Some(c)) => {
            let h1 = curr.t - a.t;
            let h2 = c.t - curr.t;
            if h1 <= 0.0 || h2 <= 0.0 {
                return Err(Error::InvalidInput("snapshots out of order".into()));
            }
            let wa = -h2 / (h1 * (h1 + h2));
            let wb = (h2 - h1) / (h1 * h2);
            let wc = h1 / (h2 * (h1 + h2));
            let mut d = a.field.scale(wa);
            d.axpy(wb, curr.field);
            d.axpy(wc, c.field);
            Ok((d, DifferenceOrder::Second))
        }
        (Some(a), None) => {
            let h = curr.t - a.t;
            if h <= 0.0 {
                return Err(Error::InvalidInput("snapshots out of order".into()));
            }
            Ok((
                curr.field.sub(a.field).scale(1.0 / h),
                DifferenceOrder::First,
            ))
        }
        (None, Some(c)) => {
            let h = c.t - curr.t;
            if h <= 0.0 {
                return Err(Error::InvalidInput("snapshots out of order".into()));
            }
            Ok((
                c.field.sub(curr.field).scale(1.0 / h),
                DifferenceOrder::First,
            ))
        }
        (None, None) => Err(Error::InvalidInput(
            "time derivative needs two snapshots".into(),
        )),
    }
}

/// `(u . grad) w`, products dealiased when requested.
pub fn advective_term(
    sp: &Spectral,
    u: &VectorGrid,
    w: &VectorGrid,
    dealias: bool,
) -> Result<VectorGrid> {
    let mut out = VectorGrid::zeros(u.n(), u.l());
    for j in 0..2 {
        let g = sp.gradient(&w.c[j])?;
        for k in 0..2 {
            let prod = if dealias {
                sp.dealiased_product(&u.c[k], &g.c[k])?
            } else {
                u.c[k].mul(&g.c[k])
            };
            out.c[j] = out.c[j].add(&prod);
        }
    }
    Ok(out)
}

/// Material derivative `dw/dt + (u . grad) w` at `curr.t`. Applied to
/// velocity snapshots it gives the acceleration; applied to acceleration
/// snapshots it gives the second material derivative.
pub fn material_derivative(
    sp: &Spectral,
    prev: Option<Snapshot>,
    curr: Snapshot,
    next: Option<Snapshot>,
    u: &VectorGrid,
    dealias: bool,
) -> Result<(VectorGrid, DifferenceOrder)> {
    let (dt, order) = time_derivative(prev, curr, next)?;
    let adv = advective_term(sp, u, curr.field, dealias)?;
    let out = dt.add(&adv);
    out.check_finite("material derivative")?;
    Ok((out, order))
}

/// Quantities the time integrator carries between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StepHistory {
    /// Velocity one step back and the step length that led from it.
    pub u_prev: Option<VectorGrid>,
    /// Divergence of `u_prev`.
    pub div_prev: Option<ScalarGrid>,
    pub dt_prev: Option<f64>,
    /// Explicit momentum terms at the previous level.
    pub explicit_prev: Option<VectorGrid>,
    /// Effective flux at the previous level.
    pub flux_prev: Option<ScalarGrid>,
    /// Reference density of the implicit split, fixed at the first step.
    pub rho_ref: Option<f64>,
    pub steps: u64,
}

/// Complete simulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub t: f64,
    pub u: VectorGrid,
    pub particles: ParticleCloud,
    pub curve: InterfaceCurve,
    pub levelset: LevelSet,
    /// Grid reconstruction matching the current particles.
    pub recon: Reconstruction,
    pub history: StepHistory,
}

impl FluidState {
    pub fn n(&self) -> usize {
        self.u.n()
    }

    pub fn l(&self) -> f64 {
        self.u.l()
    }

    pub fn rho(&self) -> &ScalarGrid {
        &self.recon.rho
    }

    /// Grid-integrated mass.
    pub fn grid_mass(&self) -> f64 {
        self.recon.rho.integral()
    }

    /// Grid-integrated momentum.
    pub fn momentum(&self) -> [f64; 2] {
        let r = &self.recon.rho;
        [
            r.mul(&self.u.c[0]).integral(),
            r.mul(&self.u.c[1]).integral(),
        ]
    }

    /// Re-reconstructs the grid density from the particles.
    pub fn reconstruct(&mut self, laws: &ConstitutiveLaws) -> Result<()> {
        self.recon = density_on_grid(&self.particles, &self.levelset, laws)?;
        Ok(())
    }

    /// Invariant checks: finiteness, density band, particle sanity.
    pub fn check(&self, laws: &ConstitutiveLaws) -> Result<()> {
        self.u.check_finite("velocity")?;
        self.recon.rho.check_finite("density")?;
        let [lo, hi] = laws.band();
        for &r in self.recon.rho.values() {
            if r < lo || r > hi {
                return Err(Error::OutOfBand { rho: r, lo, hi });
            }
        }
        self.particles.check(laws)
    }
}
