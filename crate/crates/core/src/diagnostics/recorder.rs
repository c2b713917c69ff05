//! Run-time bookkeeping: derivatives from the velocity history, running
//! functionals, and diagnostics records at a fixed step cadence.
//!
//! `u'` at a step needs the next velocity and `u''` needs the next `u'`, so
//! a record for step `k` is completed once step `k + 2` exists (or at the
//! end of the run, with one-sided differences).

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::solver::{BodyForce, Solver};
use crate::spectral::Spectral;
use crate::state::{material_derivative, DifferenceOrder, FluidState, Snapshot};

use super::decay::{decay_history, DecaySample, JumpProfile};
use super::energy::{energy_from, EnergyBalance, EnergySample};
use super::functionals::{sigma, HoffFunctionals, HoffSample, ThetaFunctional};
use super::hoff2::{hoff2_identity, Hoff2Frame, Hoff2Terms};
use super::identities::{band_mask, effective_flux, vorticity_identity};
use super::jumps::{jump_identities, MarkerResiduals};
use super::mass::lagrangian_mass;
use super::monitors::{basic_monitors, blowup_monitors, check, BlowupReport, MonitorThresholds};
use super::probe::{InterfaceView, PiecewiseNorm, ProbeConfig};
use super::Kinematics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Steps between records; the first and last states are always recorded.
    pub record_every: usize,
    /// Second Hoff identity at every step.
    pub hoff2: bool,
    /// Flux and vorticity representations at records.
    pub identities: bool,
    /// Jump identities and marker tables at records.
    pub jumps: bool,
    /// Piecewise Hoelder functional at records.
    pub theta: bool,
    /// Interface, Hoelder and smallness monitors at records.
    pub monitors: bool,
    pub lagrangian_mass: bool,
    /// Half width of the excluded interface band, in cells.
    pub band_cells: f64,
    pub thresholds: MonitorThresholds,
    pub probe: ProbeConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            record_every: 10,
            hoff2: true,
            identities: true,
            jumps: true,
            theta: true,
            monitors: true,
            lagrangian_mass: true,
            band_cells: 3.0,
            thresholds: MonitorThresholds::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::InvalidInput("diagnostics.record_every must be positive".into()));
        }
        if !(self.band_cells >= 0.0 && self.band_cells.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "diagnostics.band_cells must be nonnegative, got {}",
                self.band_cells
            )));
        }
        self.thresholds.validate()?;
        self.probe.validate()
    }
}

/// One row of the diagnostics time series. Entries computed only by an
/// enabled diagnostic are `None` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    pub sigma: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub dissipation_rate: f64,
    pub dissipated: f64,
    pub work: f64,
    /// `(E + int D - E(0) - int W) / E(0)`.
    pub energy_defect: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub theta: Option<f64>,
    pub theta_skipped: Option<usize>,
    /// `sup_t |mu - mu~|_inf / inf_t min mu`.
    pub viscosity_fluctuation: f64,
    pub flux_residual: Option<f64>,
    pub vorticity_residual: Option<f64>,
    pub stress_normal_median: Option<f64>,
    pub rank_one_median: Option<f64>,
    pub flux_jump_median: Option<f64>,
    pub vorticity_jump_median: Option<f64>,
    pub jump_invalid: Option<usize>,
    pub lagrangian_mass: Option<f64>,
    pub hoff2_residual: Option<f64>,
    pub jump_f_l4: f64,
    pub jump_f_linf: f64,
    pub jump_grad_linf: Option<f64>,
    pub curve_length: f64,
    pub c_gamma: Option<f64>,
    pub ell: Option<f64>,
    pub frak_p: Option<f64>,
    pub grad_inf: f64,
    pub grad_inf_integral: f64,
    pub inv_rho_min: f64,
    pub inv_mu_min: f64,
    pub band_proximity: f64,
    pub u_h1: f64,
    pub rho_udot: f64,
    pub grad_gamma: Option<f64>,
    pub pressure_pw: Option<f64>,
    pub composite: Option<f64>,
    /// `(E + A1 + A2 + A3 + sqrt(theta)) / c0`, when `c0` is known.
    pub functional_ratio: Option<f64>,
    pub grid_mass_drift: f64,
    pub side_mismatch: f64,
    /// Order of the time difference behind `u'` (2 centred, 1 one-sided).
    pub udot_order: u8,
}

macro_rules! columns {
    ($($name:ident),* $(,)?) => {
        impl DiagnosticsRecord {
            /// CSV column names, in row order.
            pub const COLUMNS: &'static [&'static str] = &[$(stringify!($name)),*];

            /// CSV cells; `None` becomes an empty cell.
            pub fn csv_cells(&self) -> Vec<String> {
                vec![$(Cell::cell(&self.$name)),*]
            }
        }
    };
}

columns!(
    step, t, sigma, energy, kinetic, potential, dissipation_rate, dissipated, work, energy_defect, a1, a2, a3, theta,
    theta_skipped, viscosity_fluctuation, flux_residual, vorticity_residual, stress_normal_median, rank_one_median,
    flux_jump_median, vorticity_jump_median, jump_invalid, lagrangian_mass, hoff2_residual, jump_f_l4, jump_f_linf,
    jump_grad_linf, curve_length, c_gamma, ell, frak_p, grad_inf, grad_inf_integral, inv_rho_min, inv_mu_min,
    band_proximity, u_h1, rho_udot, grad_gamma, pressure_pw, composite, functional_ratio, grid_mass_drift,
    side_mismatch, udot_order,
);

/// Formatting of one CSV cell.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        format!("{self:e}")
    }
}

impl Cell for u64 {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for u8 {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for usize {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl<T: Cell> Cell for Option<T> {
    fn cell(&self) -> String {
        self.as_ref().map(Cell::cell).unwrap_or_default()
    }
}

/// A completed record with its per-marker table and monitor report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutput {
    pub record: DiagnosticsRecord,
    pub markers: Option<Vec<MarkerResiduals>>,
    pub monitors: BlowupReport,
}

/// Running values captured when a step's `u'` becomes known.
#[derive(Debug, Clone, Copy)]
struct Partial {
    energy: EnergySample,
    balance: EnergyBalance,
    a1: f64,
    a2: f64,
    sup_grad_udot: f64,
    delta: f64,
    grad_inf: f64,
    grad_inf_integral: f64,
    udot_order: u8,
}

struct Frame {
    step: u64,
    t: f64,
    u: VectorGrid,
    rho: ScalarGrid,
    force: Option<VectorGrid>,
    udot: Option<VectorGrid>,
    partial: Option<Partial>,
    /// Full state, kept for recorded steps only.
    state: Option<Box<FluidState>>,
}

pub struct Recorder {
    cfg: DiagnosticsConfig,
    sp: Spectral,
    laws: Arc<ConstitutiveLaws>,
    force: Option<Arc<dyn BodyForce>>,
    dealias: bool,
    frames: VecDeque<Frame>,
    balance: Option<EnergyBalance>,
    hoff: HoffFunctionals,
    theta: ThetaFunctional,
    grad_inf_integral: f64,
    last_grad_inf: Option<(f64, f64)>,
    sup_dmu: f64,
    inf_mu: f64,
    mass0: f64,
    c0: Option<f64>,
    jump_profiles: Vec<JumpProfile>,
    hoff2: Vec<Hoff2Terms>,
    breach: Option<BlowupReport>,
    finished: bool,
}

impl Recorder {
    /// Starts recording from `state0` (recorded as step 0).
    pub fn new(cfg: DiagnosticsConfig, solver: &Solver, laws: Arc<ConstitutiveLaws>, state0: &FluidState) -> Result<Self> {
        cfg.validate()?;
        let alpha = cfg.probe.alpha;
        let mut rec = Self {
            sp: Spectral::new(state0.n(), state0.l())?,
            force: solver.force().cloned(),
            dealias: solver.config().dealias,
            laws,
            frames: VecDeque::with_capacity(4),
            balance: None,
            hoff: HoffFunctionals::default(),
            theta: ThetaFunctional::new(alpha),
            grad_inf_integral: 0.0,
            last_grad_inf: None,
            sup_dmu: 0.0,
            inf_mu: f64::INFINITY,
            mass0: state0.grid_mass(),
            c0: None,
            jump_profiles: Vec::new(),
            hoff2: Vec::new(),
            breach: None,
            finished: false,
            cfg,
        };
        rec.push_frame(state0, 0, true)?;
        Ok(rec)
    }

    /// Enables the `functional_ratio` column.
    pub fn set_c0(&mut self, c0: f64) {
        self.c0 = Some(c0);
    }

    pub fn config(&self) -> &DiagnosticsConfig {
        &self.cfg
    }

    pub fn hoff(&self) -> &HoffFunctionals {
        &self.hoff
    }

    pub fn theta(&self) -> &ThetaFunctional {
        &self.theta
    }

    /// `|[f(rho)]|_{L^p(C)}` at the records.
    pub fn decay_history(&self, p: f64) -> Vec<DecaySample> {
        decay_history(&self.jump_profiles, p)
    }

    pub fn jump_profiles(&self) -> &[JumpProfile] {
        &self.jump_profiles
    }

    pub fn hoff2_history(&self) -> &[Hoff2Terms] {
        &self.hoff2
    }

    pub fn energy_balance(&self) -> Option<&EnergyBalance> {
        self.balance.as_ref()
    }

    /// The report of a breached monitor threshold, if any.
    pub fn breach(&self) -> Option<&BlowupReport> {
        self.breach.as_ref()
    }

    /// Registers the state after step `step`; `force_record` records it
    /// regardless of the cadence. Returns the records completed by it.
    pub fn observe(&mut self, state: &FluidState, step: u64, force_record: bool) -> Result<Vec<RecordOutput>> {
        if self.finished {
            return Err(Error::InvalidInput("recorder already finished".into()));
        }
        let record = force_record || step % self.cfg.record_every as u64 == 0;
        self.push_frame(state, step, record)
    }

    /// Completes the pending records with one-sided differences.
    pub fn finish(&mut self) -> Result<Vec<RecordOutput>> {
        if self.finished {
            return Ok(Vec::new());
        }
        self.finished = true;
        let mut out = Vec::new();
        let m = self.frames.len();
        if m >= 2 {
            self.stage_udot(m - 1, true)?;
            if m >= 3 {
                if let Some(o) = self.stage_uddot(m - 2, false)? {
                    out.push(o);
                }
            }
            if let Some(o) = self.stage_uddot(m - 1, true)? {
                out.push(o);
            }
        } else if m == 1 {
            // A single state: no time derivative at all.
            self.stage_udot(0, true)?;
            if let Some(o) = self.stage_uddot(0, true)? {
                out.push(o);
            }
        }
        Ok(out)
    }

    fn push_frame(&mut self, state: &FluidState, step: u64, record: bool) -> Result<Vec<RecordOutput>> {
        let force = self
            .force
            .as_ref()
            .map(|f| VectorGrid::from_fn(state.n(), state.l(), |x, y| f.force(state.t, [x, y])));
        self.frames.push_back(Frame {
            step,
            t: state.t,
            u: state.u.clone(),
            rho: state.rho().clone(),
            force,
            udot: None,
            partial: None,
            state: if record { Some(Box::new(state.clone())) } else { None },
        });
        let mut out = Vec::new();
        let m = self.frames.len();
        if m >= 2 {
            self.stage_udot(m - 2, false)?;
        }
        if m >= 3 {
            if let Some(o) = self.stage_uddot(m - 3, false)? {
                out.push(o);
            }
        }
        while self.frames.len() > 4 {
            self.frames.pop_front();
        }
        Ok(out)
    }

    /// `u'` at frame `i` and every quantity that only needs it.
    fn stage_udot(&mut self, i: usize, last: bool) -> Result<()> {
        let f = &self.frames[i];
        let prev = i.checked_sub(1).map(|j| Snapshot { t: self.frames[j].t, field: &self.frames[j].u });
        let next = if last { None } else { Some(Snapshot { t: self.frames[i + 1].t, field: &self.frames[i + 1].u }) };
        let (udot, order) = if prev.is_none() && next.is_none() {
            (VectorGrid::zeros(f.u.n(), f.u.l()), DifferenceOrder::First)
        } else {
            material_derivative(&self.sp, prev, Snapshot { t: f.t, field: &f.u }, next, &f.u, self.dealias)?
        };
        let laws = &*self.laws;
        let kin = Kinematics::new(&self.sp, &f.u)?;
        let t = f.t;
        let energy = energy_from(laws, &f.rho, &f.u, &kin);
        let power = f.force.as_ref().map_or(0.0, |b| b.dot(&f.u));
        match self.balance.as_mut() {
            None => self.balance = Some(EnergyBalance::new(t, &energy, power)),
            Some(b) => b.push(t, &energy, power),
        }
        let gi = kin.grad_sup();
        if let Some((t0, g0)) = self.last_grad_inf {
            self.grad_inf_integral += 0.5 * (t - t0) * (g0 + gi);
        }
        self.last_grad_inf = Some((t, gi));
        for &r in f.rho.values() {
            let mu = laws.mu(r);
            self.sup_dmu = self.sup_dmu.max((mu - laws.mu_ref()).abs());
            self.inf_mu = self.inf_mu.min(mu);
        }
        let rho_udot = f.rho.dot(&udot.c[0].mul(&udot.c[0]).add(&udot.c[1].mul(&udot.c[1])));
        let grad_udot = Kinematics::new(&self.sp, &udot)?.grad_l2_sq();
        self.hoff.push(&HoffSample {
            t,
            grad_u: Some(kin.grad_l2_sq()),
            rho_udot: Some(rho_udot),
            grad_udot: Some(grad_udot),
            rho_uddot: None,
        });
        let rep = basic_monitors(laws, t, &f.rho, &f.u, &kin, Some(&udot));
        let mut rep = rep;
        check(&mut rep, &self.cfg.thresholds);
        if !rep.breached.is_empty() && self.breach.is_none() {
            self.breach = Some(rep);
        }
        let partial = Partial {
            energy,
            balance: self.balance.expect("set above"),
            a1: self.hoff.a1(),
            a2: self.hoff.a2(),
            sup_grad_udot: self.hoff.sup_grad_udot.value,
            delta: self.sup_dmu / self.inf_mu,
            grad_inf: gi,
            grad_inf_integral: self.grad_inf_integral,
            udot_order: match order {
                DifferenceOrder::Second => 2,
                DifferenceOrder::First => 1,
            },
        };
        let f = &mut self.frames[i];
        f.udot = Some(udot);
        f.partial = Some(partial);
        Ok(())
    }

    /// `u''` and the second Hoff identity at frame `i`, then its record.
    fn stage_uddot(&mut self, i: usize, last: bool) -> Result<Option<RecordOutput>> {
        let udot_of = |j: usize| self.frames[j].udot.as_ref().expect("u' computed first");
        let f = &self.frames[i];
        let prev = i.checked_sub(1).map(|j| Snapshot { t: self.frames[j].t, field: udot_of(j) });
        let next = if last { None } else { Some(Snapshot { t: self.frames[i + 1].t, field: udot_of(i + 1) }) };
        let curr = Snapshot { t: f.t, field: udot_of(i) };
        if prev.is_some() || next.is_some() {
            let (uddot, _) = material_derivative(&self.sp, prev, curr, next, &f.u, self.dealias)?;
            let v = f.rho.dot(&uddot.c[0].mul(&uddot.c[0]).add(&uddot.c[1].mul(&uddot.c[1])));
            self.hoff.push(&HoffSample { t: f.t, rho_uddot: Some(v), ..HoffSample::default() });
        }
        let mut h2 = None;
        // A one-sided u' is only first order; its error, divided by the
        // step in d/dt, would swamp the identity.
        let second = |j: usize| self.frames[j].partial.as_ref().is_some_and(|p| p.udot_order == 2);
        if self.cfg.hoff2 && i >= 1 && !last && second(i - 1) && second(i) && second(i + 1) {
            let frame = |j: usize| {
                let g = &self.frames[j];
                Hoff2Frame { t: g.t, rho: &g.rho, udot: udot_of(j), force: g.force.as_ref() }
            };
            let terms = hoff2_identity(&self.sp, &self.laws, frame(i - 1), frame(i), frame(i + 1), &f.u)?;
            self.hoff2.push(terms);
            h2 = Some(terms.residual);
        }
        if self.frames[i].state.is_none() {
            return Ok(None);
        }
        let out = self.complete_record(i, h2)?;
        Ok(Some(out))
    }

    fn complete_record(&mut self, i: usize, hoff2: Option<f64>) -> Result<RecordOutput> {
        let laws = self.laws.clone();
        let laws = &*laws;
        let cfg = self.cfg.clone();
        let f = &self.frames[i];
        let state = f.state.as_deref().expect("recorded frame");
        let part = f.partial.expect("u' stage done");
        let udot = f.udot.as_ref().expect("u' stage done");
        let kin = Kinematics::new(&self.sp, &state.u)?;
        let view = InterfaceView::new(state, &cfg.probe);
        let h = view.h();
        let stream = 1000 * f.step;

        let (flux_res, vort_res) = if cfg.identities {
            let mask = band_mask(state, cfg.band_cells * h);
            let force = f.force.as_ref();
            let a = effective_flux(&self.sp, laws, state.rho(), &kin, udot, force, &mask)?;
            let b = vorticity_identity(&self.sp, laws, state.rho(), &kin, udot, force, &mask)?;
            (Some(a.residual), Some(b.residual))
        } else {
            (None, None)
        };

        let (jump_f, jumps, f_jumps, f_valid) = if cfg.jumps {
            let rep = jump_identities(&view, laws, &state.u);
            let (j, ok) = rep.markers.iter().map(|m| (m.jump_f, m.valid)).unzip();
            (rep.jump_f, Some(rep), j, ok)
        } else {
            let s = view.jumps("f", &state.recon.fval);
            let (j, ok): (Vec<f64>, Vec<bool>) = s.iter().map(|m| (m.jump, m.valid)).unzip();
            (view.jump_norms(&s), None, j, ok)
        };
        let weights = state.curve.marker_weights();
        self.jump_profiles.push(JumpProfile::new(f.t, part.grad_inf_integral, &f_jumps, &f_valid, &weights));

        let theta = if cfg.theta {
            let fnorm = view.piecewise_norm(&state.recon.fval, &|v| v, stream + 20);
            let mut gnorm = 0.0f64;
            for e in 0..4 {
                let g = &kin.grad.c[e / 2][e % 2];
                let pn: PiecewiseNorm = view.piecewise_norm(g, &|v| v, stream + 30 + e as u64);
                gnorm = gnorm.max(pn.norm());
            }
            self.theta.push(f.t, fnorm.norm(), gnorm);
            Some(self.theta.value())
        } else {
            None
        };

        let monitors = if cfg.monitors {
            let r = blowup_monitors(&view, laws, &kin, Some(udot), &cfg.thresholds, stream + 40)?;
            if !r.breached.is_empty() && self.breach.is_none() {
                self.breach = Some(r.clone());
            }
            r
        } else {
            let mut r = basic_monitors(laws, f.t, state.rho(), &state.u, &kin, Some(udot));
            check(&mut r, &cfg.thresholds);
            r
        };

        let mass = if cfg.lagrangian_mass { Some(lagrangian_mass(laws, &state.particles)?.max) } else { None };

        let a3 = part.sup_grad_udot + self.hoff.int_rho_uddot.total;
        let e = part.energy.energy;
        let ratio = self.c0.and_then(|c0| {
            (c0 > 0.0).then(|| (e + part.a1 + part.a2 + a3 + theta.unwrap_or(0.0).sqrt()) / c0)
        });
        let geom = monitors.smallness.map(|s| s.geometry);
        let record = DiagnosticsRecord {
            step: f.step,
            t: f.t,
            sigma: sigma(f.t),
            energy: e,
            kinetic: part.energy.kinetic,
            potential: part.energy.potential,
            dissipation_rate: part.energy.dissipation_rate,
            dissipated: part.balance.dissipated,
            work: part.balance.work,
            energy_defect: part.balance.relative_defect(),
            a1: part.a1,
            a2: part.a2,
            a3,
            theta,
            theta_skipped: cfg.theta.then_some(self.theta.skipped),
            viscosity_fluctuation: part.delta,
            flux_residual: flux_res,
            vorticity_residual: vort_res,
            stress_normal_median: jumps.as_ref().map(|j| j.median_r1),
            rank_one_median: jumps.as_ref().map(|j| j.median_r2),
            flux_jump_median: jumps.as_ref().map(|j| j.median_r3),
            vorticity_jump_median: jumps.as_ref().map(|j| j.median_r4),
            jump_invalid: jumps.as_ref().map(|j| j.invalid),
            lagrangian_mass: mass,
            hoff2_residual: hoff2,
            jump_f_l4: jump_f.l4,
            jump_f_linf: jump_f.linf,
            jump_grad_linf: jumps.as_ref().map(|j| j.jump_grad.linf),
            curve_length: state.curve.length(),
            c_gamma: geom.map(|g| g.c_gamma),
            ell: geom.map(|g| g.ell),
            frak_p: geom.map(|g| g.frak_p),
            grad_inf: part.grad_inf,
            grad_inf_integral: part.grad_inf_integral,
            inv_rho_min: monitors.inv_rho_min,
            inv_mu_min: monitors.inv_mu_min,
            band_proximity: monitors.band_proximity,
            u_h1: monitors.u_h1,
            rho_udot: monitors.rho_udot.unwrap_or(0.0),
            grad_gamma: monitors.grad_gamma,
            pressure_pw: monitors.pressure_pw,
            composite: monitors.composite(),
            functional_ratio: ratio,
            grid_mass_drift: super::relative((state.grid_mass() - self.mass0).abs(), self.mass0.abs()),
            side_mismatch: state.particles.side_mismatch(&state.levelset),
            udot_order: part.udot_order,
        };
        let markers = jumps.map(|j| j.markers);
        self.frames[i].state = None;
        Ok(RecordOutput { record, markers, monitors })
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    BlowupMonitor,
    InvalidState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub steps: u64,
    pub t: f64,
    /// Message of the error that invalidated the state.
    pub error: Option<String>,
    pub breach: Option<BlowupReport>,
}

/// Steps `state` to `t_end`, feeding every state to `recorder` and every
/// completed record to `sink`. Numerical failures end the run with
/// `InvalidState`; errors from `sink` are returned.
pub fn run(
    solver: &Solver,
    state: &mut FluidState,
    t_end: f64,
    recorder: &mut Recorder,
    sink: &mut dyn FnMut(&RecordOutput) -> Result<()>,
) -> Result<RunOutcome> {
    run_with(solver, state, t_end, recorder, sink, &mut |_, _| Ok(()))
}

/// As [`run`], calling `on_step` with every accepted state and its step
/// number (checkpoints, progress).
pub fn run_with(
    solver: &Solver,
    state: &mut FluidState,
    t_end: f64,
    recorder: &mut Recorder,
    sink: &mut dyn FnMut(&RecordOutput) -> Result<()>,
    on_step: &mut dyn FnMut(&FluidState, u64) -> Result<()>,
) -> Result<RunOutcome> {
    let mut step = 0u64;
    let mut status = RunStatus::Completed;
    let mut error = None;
    loop {
        let dt = solver.cfl_dt(state);
        let remaining = t_end - state.t;
        if remaining <= 1e-6 * dt {
            break;
        }
        // Stretch the step slightly rather than leave a sliver at the end.
        let dt = if remaining <= 1.01 * dt { remaining } else { dt };
        if let Err(e) = solver.step_with_dt(state, dt).and_then(|_| state.check(solver.laws())) {
            status = RunStatus::InvalidState;
            error = Some(e.to_string());
            break;
        }
        step += 1;
        let last = t_end - state.t <= 1e-6 * dt;
        for out in recorder.observe(state, step, last)? {
            sink(&out)?;
        }
        on_step(state, step)?;
        if recorder.breach().is_some() {
            status = RunStatus::BlowupMonitor;
            break;
        }
    }
    for out in recorder.finish()? {
        sink(&out)?;
    }
    Ok(RunOutcome { status, steps: step, t: state.t, error, breach: recorder.breach().cloned() })
}
