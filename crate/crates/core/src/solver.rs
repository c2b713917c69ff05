//! Time integration: Lagrangian f-ODE for the density, marker and level-set
//! transport, and a semi-implicit pseudo-spectral velocity step.
//!
//! The momentum equation is divided by the density and split as
//!
//! ```text
//! u_t = (1/rho_ref) Lc u  +  [ -(u.grad)u + S(u, rho) ]  +  (-grad(P - P~) + f) / rho
//! Lc u = mu~ Lap u + (mu~ + lambda~) grad div u
//! S    = (1/rho) [div(2 (mu - mu~) Du) + grad((lambda - lambda~) div u)] + (1/rho - 1/rho_ref) Lc u
//! ```
//!
//! `Lc` is inverted per Fourier mode; the bracket is extrapolated in time
//! (variable-step IMEX BDF2) and then corrected once with the predicted
//! velocity and the new density.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::{MatrixGrid, ScalarGrid, VectorGrid};
use crate::interface::{advect_levelset, advect_markers};
use crate::spectral::{strain_from_gradient, Spectral};
use crate::state::{density_on_grid, jacobian_update_sided, FluidState, LinearInTime, ParticleCloud};

/// External force per unit volume, for verification runs only.
pub trait BodyForce: Send + Sync {
    fn force(&self, t: f64, x: [f64; 2]) -> [f64; 2];
}

impl<F> BodyForce for F
where
    F: Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync,
{
    fn force(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DtControl {
    Fixed { dt: f64 },
    Cfl { dt_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub dt: DtControl,
    pub cfl: f64,
    /// Implicit split viscosity; `mu(rho_ref)` when absent.
    pub mu_split: Option<f64>,
    pub dealias: bool,
    /// One fixed-point correction of the explicit terms per step.
    pub correction: bool,
    /// Kinematic mode: velocity held at zero and the effective flux set to
    /// zero, leaving only the damping in the f-ODE.
    pub frozen_velocity: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: DtControl::Cfl { dt_max: 1e-2 },
            cfl: 0.4,
            mu_split: None,
            dealias: true,
            correction: true,
            frozen_velocity: false,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        match self.dt {
            DtControl::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::InvalidInput(format!(
                    "step.dt.dt must be positive, got {dt}"
                )))
            }
            DtControl::Cfl { dt_max } if !(dt_max > 0.0 && dt_max.is_finite()) => {
                return Err(Error::InvalidInput(format!(
                    "step.dt.dt_max must be positive, got {dt_max}"
                )))
            }
            _ => {}
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            return Err(Error::InvalidInput(format!(
                "step.cfl must lie in (0, 0.9], got {}",
                self.cfl
            )));
        }
        if let Some(m) = self.mu_split {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "step.mu_split must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// What a step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: f64,
    pub dt: f64,
    /// 1 for the start-up step, 2 afterwards.
    pub bdf_order: u8,
    pub corrected: bool,
    pub max_particle_disp: f64,
}

/// `F = (2 mu + lambda) div u - (P - P~)`, pointwise.
pub fn effective_flux_direct(
    laws: &ConstitutiveLaws,
    rho: &ScalarGrid,
    divu: &ScalarGrid,
) -> ScalarGrid {
    let p_ref = laws.p_ref();
    rho.zip_map(divu, |r, d| {
        (2.0 * laws.mu(r) + laws.lambda(r)) * d - (laws.p(r) - p_ref)
    })
}

/// Midpoint RK2 for `d fval/dt = -(P(rho) - P~) - F(x)` on every particle.
/// `start` holds the positions at the beginning of the step and
/// `particles.pos` those at its end; `F` is sampled at their average and
/// at the half-time level. `flux = None` means `F = 0`.
pub fn f_value_step(
    particles: &mut ParticleCloud,
    start: &[[f64; 2]],
    flux: Option<&LinearInTime>,
    laws: &ConstitutiveLaws,
    dt: f64,
) -> Result<()> {
    if start.len() != particles.len() {
        return Err(Error::InvalidInput(
            "start positions do not match the particle cloud".into(),
        ));
    }
    let p_ref = laws.p_ref();
    let pos = &particles.pos;
    particles
        .fval
        .par_iter_mut()
        .zip(particles.rho.par_iter_mut())
        .zip(pos.par_iter().zip(start.par_iter()))
        .try_for_each(|((f, r), (x1, x0))| -> Result<()> {
            let mut s = [0.0];
            let (f_start, f_half) = match flux {
                Some(g) => {
                    g.sample_into(*x0, 0.0, &mut s);
                    let a = s[0];
                    let xm = [0.5 * (x0[0] + x1[0]), 0.5 * (x0[1] + x1[1])];
                    g.sample_into(xm, 0.5 * dt, &mut s);
                    (a, s[0])
                }
                None => (0.0, 0.0),
            };
            let k1 = -(laws.p(*r) - p_ref) - f_start;
            let fh = *f + 0.5 * dt * k1;
            let rh = laws.f_inverse_from(fh, Some(*r))?;
            let k2 = -(laws.p(rh) - p_ref) - f_half;
            let fnew = *f + dt * k2;
            let rnew = laws.f_inverse_from(fnew, Some(rh))?;
            *f = fnew;
            *r = rnew;
            Ok(())
        })
}

pub struct Solver {
    sp: Spectral,
    laws: Arc<ConstitutiveLaws>,
    cfg: StepConfig,
    force: Option<Arc<dyn BodyForce>>,
    mu_split: f64,
    lambda_split: f64,
}

impl Solver {
    pub fn new(n: usize, l: f64, laws: Arc<ConstitutiveLaws>, cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        let sp = Spectral::new(n, l)?;
        let mu_split = cfg.mu_split.unwrap_or_else(|| laws.mu_ref());
        let lambda_split = laws.lambda_ref();
        Ok(Self {
            sp,
            laws,
            cfg,
            force: None,
            mu_split,
            lambda_split,
        })
    }

    pub fn with_force(mut self, force: Arc<dyn BodyForce>) -> Self {
        self.force = Some(force);
        self
    }

    pub fn spectral(&self) -> &Spectral {
        &self.sp
    }

    pub fn laws(&self) -> &ConstitutiveLaws {
        &self.laws
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn mu_split(&self) -> f64 {
        self.mu_split
    }

    pub fn lambda_split(&self) -> f64 {
        self.lambda_split
    }

    pub fn force(&self) -> Option<&Arc<dyn BodyForce>> {
        self.force.as_ref()
    }

    /// Step length for the configured control.
    pub fn cfl_dt(&self, state: &FluidState) -> f64 {
        let dt_max = match self.cfg.dt {
            DtControl::Fixed { dt } => return dt,
            DtControl::Cfl { dt_max } => dt_max,
        };
        let h = state.l() / state.n() as f64;
        let cfl = self.cfg.cfl;
        let laws = &*self.laws;
        let umax = state.u.max_norm();
        let adv = if umax > 0.0 {
            cfl * h / umax
        } else {
            f64::INFINITY
        };
        let rho = &state.recon.rho;
        let (mut dmu, mut dlam, mut nu) = (0.0f64, 0.0f64, 0.0f64);
        for &r in rho.values() {
            dmu = dmu.max((laws.mu(r) - self.mu_split).abs());
            dlam = dlam.max((laws.lambda(r) - self.lambda_split).abs());
            nu = nu.max(r * laws.dp(r) / (2.0 * laws.mu(r) + laws.lambda(r)));
        }
        let coef = 2.0 * dmu + dlam;
        let rem = if coef > 0.0 {
            cfl * rho.min() * h * h / (2.0 * coef)
        } else {
            f64::INFINITY
        };
        // Explicit midpoint damping of the f-ODE: stable for dt * nu < 2.
        let relax = if nu > 0.0 {
            2.0 * cfl / nu
        } else {
            f64::INFINITY
        };
        adv.min(rem).min(relax).min(dt_max)
    }

    /// Advances the state by one step of length `cfl_dt`.
    pub fn full_step(&self, state: &mut FluidState) -> Result<StepReport> {
        let dt = self.cfl_dt(state);
        self.step_with_dt(state, dt)
    }

    /// Advances the state by `dt`: effective flux from the current state,
    /// then particle, marker and level-set transport with the f-ODE, then
    /// density reconstruction, then the velocity step.
    pub fn step_with_dt(&self, state: &mut FluidState, dt: f64) -> Result<StepReport> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step length must be positive, got {dt}"
            )));
        }
        let laws = &*self.laws;
        let n = state.n();
        let l = state.l();
        let h = l / n as f64;
        let hist = &state.history;
        let rho_ref = hist.rho_ref.unwrap_or_else(|| state.recon.rho.min());
        let frozen = self.cfg.frozen_velocity;

        let u_hat = [
            self.sp.forward(&state.u.c[0])?,
            self.sp.forward(&state.u.c[1])?,
        ];
        let grad = self.gradient_from_hat(&u_hat);
        let divu = grad.trace();
        let flux = if frozen {
            ScalarGrid::zeros(n, l)
        } else {
            effective_flux_direct(laws, &state.recon.rho, &divu)
        };

        // Transport.
        let mut particles = state.particles.clone();
        let start = particles.pos.clone();
        let max_disp = 1.5 * h;
        let (curve, levelset, moved) = if frozen {
            (state.curve.clone(), state.levelset.clone(), 0.0)
        } else {
            let prev = match (&hist.u_prev, &hist.div_prev, hist.dt_prev) {
                (Some(up), Some(dp), Some(dtp)) => {
                    Some((vec![up.c[0].clone(), up.c[1].clone(), dp.clone()], dtp))
                }
                _ => None,
            };
            let carrier = LinearInTime::from_snapshots(
                vec![state.u.c[0].clone(), state.u.c[1].clone(), divu.clone()],
                prev.as_ref().map(|(v, d)| (v.as_slice(), *d)),
            )?;
            if carrier.is_zero() {
                // Transport by a vanishing field is the identity.
                (state.curve.clone(), state.levelset.clone(), 0.0)
            } else {
                let sides = state.levelset.node_sides();
                jacobian_update_sided(&mut particles, &carrier, Some(&sides), dt)?;
                let moved = particles
                    .pos
                    .par_iter()
                    .zip(start.par_iter())
                    .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                    .reduce(|| 0.0, f64::max);
                if moved > max_disp {
                    return Err(Error::CflViolation {
                        displacement: moved,
                        limit: max_disp,
                    });
                }
                let curve = advect_markers(&state.curve, &carrier, dt, max_disp)?;
                let levelset = advect_levelset(&state.levelset, &carrier, dt, max_disp)?;
                (curve, levelset, moved)
            }
        };

        let flux_field = if frozen {
            None
        } else {
            let prev = match (&hist.flux_prev, hist.dt_prev) {
                (Some(f), Some(d)) => Some((std::slice::from_ref(f), d)),
                _ => None,
            };
            Some(LinearInTime::from_snapshots(vec![flux.clone()], prev)?)
        };
        f_value_step(&mut particles, &start, flux_field.as_ref(), laws, dt)?;
        let unchanged =
            particles.fval == state.particles.fval && particles.pos == state.particles.pos;
        let recon = if unchanged {
            state.recon.clone()
        } else {
            density_on_grid(&particles, &levelset, laws)?
        };

        let t_next = state.t + dt;
        let (u_next, explicit_now, order) = if frozen {
            (state.u.clone(), None, 1)
        } else {
            let (u, e, o) = self.velocity_step(
                &state.u,
                &u_hat,
                &grad,
                &state.recon.rho,
                &recon.rho,
                state,
                rho_ref,
                t_next,
                dt,
            )?;
            (u, Some(e), o)
        };
        u_next.check_finite("velocity")?;

        let u_prev = std::mem::replace(&mut state.u, u_next);
        state.particles = particles;
        state.curve = curve;
        state.levelset = levelset;
        state.recon = recon;
        let hist = &mut state.history;
        hist.u_prev = Some(u_prev);
        hist.div_prev = Some(divu);
        hist.dt_prev = Some(dt);
        hist.explicit_prev = explicit_now;
        hist.flux_prev = Some(flux);
        hist.rho_ref = Some(rho_ref);
        hist.steps += 1;
        state.t = t_next;
        Ok(StepReport {
            t: state.t,
            dt,
            bdf_order: order,
            corrected: self.cfg.correction && !frozen,
            max_particle_disp: moved,
        })
    }

    /// Velocity at the new level. Returns the new velocity, the explicit
    /// terms at the old level (kept for extrapolation) and the BDF order.
    #[allow(clippy::too_many_arguments)]
    pub fn velocity_step(
        &self,
        u: &VectorGrid,
        u_hat: &[Vec<Complex64>; 2],
        grad: &MatrixGrid,
        rho_now: &ScalarGrid,
        rho_next: &ScalarGrid,
        state: &FluidState,
        rho_ref: f64,
        t_next: f64,
        dt: f64,
    ) -> Result<(VectorGrid, VectorGrid, u8)> {
        let hist = &state.history;
        let e_now = self.explicit_terms(u, u_hat, grad, rho_now, rho_ref)?;
        let (a0, mut base, e_star, order) = match (&hist.u_prev, &hist.explicit_prev, hist.dt_prev)
        {
            (Some(up), Some(ep), Some(dtp)) => {
                let w = dt / dtp;
                let a0 = (1.0 + 2.0 * w) / (1.0 + w);
                let a1 = -(1.0 + w);
                let a2 = w * w / (1.0 + w);
                let mut b = u.scale(-a1 / dt);
                b.axpy(-a2 / dt, up);
                let mut e = e_now.scale(1.0 + w);
                e.axpy(-w, ep);
                (a0, b, e, 2)
            }
            _ => (1.0, u.scale(1.0 / dt), e_now.clone(), 1),
        };
        base = base.add(&self.pressure_and_force(rho_next, t_next)?);
        let pred = self.implicit_solve(&base.add(&e_star), a0, dt, rho_ref)?;
        if !self.cfg.correction {
            return Ok((pred, e_now, order));
        }
        let p_hat = [self.sp.forward(&pred.c[0])?, self.sp.forward(&pred.c[1])?];
        let p_grad = self.gradient_from_hat(&p_hat);
        let e_next = self.explicit_terms(&pred, &p_hat, &p_grad, rho_next, rho_ref)?;
        let corr = self.implicit_solve(&base.add(&e_next), a0, dt, rho_ref)?;
        Ok((corr, e_now, order))
    }

    /// `grad u` from the spectra of the components; entry `(j, k) = d_k u^j`.
    pub fn gradient_from_hat(&self, u_hat: &[Vec<Complex64>; 2]) -> MatrixGrid {
        let n = self.sp.n();
        let d = |c: usize, axis: usize| {
            let mut v = u_hat[c].clone();
            for i in 0..n {
                for j in 0..n {
                    v[i * n + j] *= self.sp.derivative_symbol(axis, i, j);
                }
            }
            self.sp.inverse(v)
        };
        MatrixGrid {
            c: [[d(0, 0), d(0, 1)], [d(1, 0), d(1, 1)]],
        }
    }

    /// `Lc u` from the velocity spectra.
    fn constant_operator(&self, u_hat: &[Vec<Complex64>; 2]) -> VectorGrid {
        let n = self.sp.n();
        let ke = self.sp.k_even();
        let ko = self.sp.k_odd();
        let nu = self.mu_split + self.lambda_split;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        let mut b = a.clone();
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let kk = ke[i] * ke[i] + ke[j] * ke[j];
                let kd = u_hat[0][idx] * ko[i] + u_hat[1][idx] * ko[j];
                a[idx] = -self.mu_split * kk * u_hat[0][idx] - nu * ko[i] * kd;
                b[idx] = -self.mu_split * kk * u_hat[1][idx] - nu * ko[j] * kd;
            }
        }
        VectorGrid {
            c: [self.sp.inverse(a), self.sp.inverse(b)],
        }
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        !self.cfg.dealias || self.sp.in_dealias_band(i, j)
    }

    /// Inverse transform of `hat * sym`, restricted to the dealiasing band.
    fn band_inverse(
        &self,
        hat: &[Complex64],
        sym: impl Fn(usize, usize) -> Complex64,
    ) -> ScalarGrid {
        let n = self.sp.n();
        let mut v = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                if self.in_band(i, j) {
                    v[i * n + j] = hat[i * n + j] * sym(i, j);
                }
            }
        }
        self.sp.inverse(v)
    }

    fn band_limit(&self, g: &ScalarGrid) -> Result<ScalarGrid> {
        if !self.cfg.dealias {
            return Ok(g.clone());
        }
        let hat = self.sp.forward(g)?;
        Ok(self.band_inverse(&hat, |_, _| Complex64::new(1.0, 0.0)))
    }

    /// `-(u.grad)u + S(u, rho)`. With dealiasing every quadratic product is
    /// formed from 2/3-truncated factors and truncated again.
    pub fn explicit_terms(
        &self,
        u: &VectorGrid,
        u_hat: &[Vec<Complex64>; 2],
        grad: &MatrixGrid,
        rho: &ScalarGrid,
        rho_ref: f64,
    ) -> Result<VectorGrid> {
        let laws = &*self.laws;
        let n = u.n();
        let l = u.l();
        let one = |_: usize, _: usize| Complex64::new(1.0, 0.0);
        let (ut, gt) = if self.cfg.dealias {
            let ut = VectorGrid {
                c: [
                    self.band_inverse(&u_hat[0], one),
                    self.band_inverse(&u_hat[1], one),
                ],
            };
            let d = |c: usize, axis: usize| {
                self.band_inverse(&u_hat[c], |i, j| self.sp.derivative_symbol(axis, i, j))
            };
            (
                ut,
                MatrixGrid {
                    c: [[d(0, 0), d(0, 1)], [d(1, 0), d(1, 1)]],
                },
            )
        } else {
            (u.clone(), grad.clone())
        };
        let mut out = VectorGrid::zeros(n, l);
        for j in 0..2 {
            let adv = ut.c[0].mul(&gt.c[j][0]).add(&ut.c[1].mul(&gt.c[j][1]));
            out.c[j] = self.band_limit(&adv)?.scale(-1.0);
        }

        let dmu = rho.map(|r| laws.mu(r) - self.mu_split);
        let dlam = rho.map(|r| laws.lambda(r) - self.lambda_split);
        let has_mu = dmu.max_abs() > 0.0;
        let has_lam = dlam.max_abs() > 0.0;
        if has_mu || has_lam {
            let zero = vec![Complex64::new(0.0, 0.0); n * n];
            let (h00, h01, h11) = if has_mu {
                let du = strain_from_gradient(&gt);
                let m = self.band_limit(&dmu)?;
                (
                    self.sp.forward(&m.mul(&du.c[0][0]).scale(2.0))?,
                    self.sp.forward(&m.mul(&du.c[0][1]).scale(2.0))?,
                    self.sp.forward(&m.mul(&du.c[1][1]).scale(2.0))?,
                )
            } else {
                (zero.clone(), zero.clone(), zero.clone())
            };
            let hq = if has_lam {
                let m = self.band_limit(&dlam)?;
                self.sp.forward(&m.mul(&gt.trace()))?
            } else {
                zero
            };
            let mut a = vec![Complex64::new(0.0, 0.0); n * n];
            let mut b = a.clone();
            for i in 0..n {
                for jj in 0..n {
                    if !self.in_band(i, jj) {
                        continue;
                    }
                    let idx = i * n + jj;
                    let d1 = self.sp.derivative_symbol(0, i, jj);
                    let d2 = self.sp.derivative_symbol(1, i, jj);
                    a[idx] = d1 * (h00[idx] + hq[idx]) + d2 * h01[idx];
                    b[idx] = d1 * h01[idx] + d2 * (h11[idx] + hq[idx]);
                }
            }
            let v = VectorGrid {
                c: [self.sp.inverse(a), self.sp.inverse(b)],
            };
            let inv_rho = rho.map(|r| 1.0 / r);
            out = out.add(&v.mul_scalar_field(&inv_rho));
        }

        if rho.values().iter().any(|&r| r != rho_ref) {
            let w = rho.map(|r| 1.0 / r - 1.0 / rho_ref);
            let lc = self.constant_operator(u_hat);
            out = out.add(&lc.mul_scalar_field(&w));
        }
        Ok(out)
    }

    /// `(-grad(P - P~) + f) / rho` at the new level.
    fn pressure_and_force(&self, rho: &ScalarGrid, t: f64) -> Result<VectorGrid> {
        let laws = &*self.laws;
        let p_ref = laws.p_ref();
        let dp = rho.map(|r| laws.p(r) - p_ref);
        let mut g = if dp.max_abs() > 0.0 {
            self.sp.gradient(&dp)?.scale(-1.0)
        } else {
            VectorGrid::zeros(rho.n(), rho.l())
        };
        if let Some(force) = &self.force {
            let f = VectorGrid::from_fn(rho.n(), rho.l(), |x, y| force.force(t, [x, y]));
            g = g.add(&f);
        }
        let inv_rho = rho.map(|r| 1.0 / r);
        Ok(g.mul_scalar_field(&inv_rho))
    }

    /// Solves `(a0/dt) u - (1/rho_ref) Lc u = rhs` mode by mode
    /// (Sherman-Morrison on the rank-one `grad div` block).
    pub fn implicit_solve(
        &self,
        rhs: &VectorGrid,
        a0: f64,
        dt: f64,
        rho_ref: f64,
    ) -> Result<VectorGrid> {
        let n = self.sp.n();
        let ke = self.sp.k_even();
        let ko = self.sp.k_odd();
        let mut a = self.sp.forward(&rhs.c[0])?;
        let mut b = self.sp.forward(&rhs.c[1])?;
        let beta = (self.mu_split + self.lambda_split) / rho_ref;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let kk = ke[i] * ke[i] + ke[j] * ke[j];
                let alpha = a0 / dt + self.mu_split * kk / rho_ref;
                let ko2 = ko[i] * ko[i] + ko[j] * ko[j];
                let kd = a[idx] * ko[i] + b[idx] * ko[j];
                let s = beta / (alpha + beta * ko2);
                a[idx] = (a[idx] - s * ko[i] * kd) / alpha;
                b[idx] = (b[idx] - s * ko[j] * kd) / alpha;
            }
        }
        Ok(VectorGrid {
            c: [self.sp.inverse(a), self.sp.inverse(b)],
        })
    }
}
