//! Blow-up monitors: the quantities whose boundedness continues a solution,
//! the viscosity smallness composite, and the distance of the density to
//! the admissible band.

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::VectorGrid;

use super::probe::{viscosity_smallness, InterfaceView, ViscositySmallness};
use super::Kinematics;

/// Thresholds; `None` disables a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorThresholds {
    pub c_gamma: Option<f64>,
    pub grad_gamma: Option<f64>,
    pub inv_rho_min: Option<f64>,
    pub inv_mu_min: Option<f64>,
    pub u_h1: Option<f64>,
    pub rho_udot: Option<f64>,
    pub pressure_pw: Option<f64>,
    pub composite: Option<f64>,
    /// Bound on `a / (rho - a)` at the lower band end `a` and on
    /// `b / (b - rho)` at the upper end `b`.
    pub band_proximity: Option<f64>,
}

impl Default for MonitorThresholds {
    fn default() -> Self {
        Self {
            c_gamma: None,
            grad_gamma: None,
            inv_rho_min: None,
            inv_mu_min: None,
            u_h1: None,
            rho_udot: None,
            pressure_pw: None,
            composite: None,
            band_proximity: Some(100.0),
        }
    }
}

impl MonitorThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("c_gamma", self.c_gamma),
            ("grad_gamma", self.grad_gamma),
            ("inv_rho_min", self.inv_rho_min),
            ("inv_mu_min", self.inv_mu_min),
            ("u_h1", self.u_h1),
            ("rho_udot", self.rho_udot),
            ("pressure_pw", self.pressure_pw),
            ("composite", self.composite),
            ("band_proximity", self.band_proximity),
        ];
        for (name, v) in all {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidInput(format!("monitors.{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub t: f64,
    pub inv_rho_min: f64,
    pub inv_mu_min: f64,
    pub band_proximity: f64,
    pub u_h1: f64,
    pub rho_udot: Option<f64>,
    /// Interface and Hoelder monitors, present when evaluated.
    pub c_gamma: Option<f64>,
    pub grad_gamma: Option<f64>,
    pub pressure_pw: Option<f64>,
    pub smallness: Option<ViscositySmallness>,
    /// Names of the monitors above their thresholds.
    pub breached: Vec<String>,
}

impl BlowupReport {
    pub fn composite(&self) -> Option<f64> {
        self.smallness.map(|s| s.composite)
    }
}

/// Cheap monitors only: density, viscosity, band distance, `|u|_{H^1}` and
/// `|rho u'|_{L^2}` when the acceleration is known.
pub fn basic_monitors(
    laws: &ConstitutiveLaws,
    t: f64,
    rho: &crate::grid::ScalarGrid,
    u: &VectorGrid,
    kin: &Kinematics,
    udot: Option<&VectorGrid>,
) -> BlowupReport {
    let (rmin, rmax) = (rho.min(), rho.max());
    let mu_min = rho.values().iter().map(|&r| laws.mu(r)).fold(f64::INFINITY, f64::min);
    let [a, b] = laws.band();
    let prox = (a / (rmin - a)).max(b / (b - rmax));
    let u_h1 = (u.l2_norm().powi(2) + kin.grad_l2_sq()).sqrt();
    let rho_udot = udot.map(|d| d.mul_scalar_field(rho).l2_norm());
    BlowupReport {
        t,
        inv_rho_min: 1.0 / rmin,
        inv_mu_min: 1.0 / mu_min,
        band_proximity: if prox.is_finite() && prox > 0.0 { prox } else { f64::INFINITY },
        u_h1,
        rho_udot,
        c_gamma: None,
        grad_gamma: None,
        pressure_pw: None,
        smallness: None,
        breached: Vec::new(),
    }
}

/// Full report, adding the interface characteristics, the piecewise
/// pressure norm and the viscosity composite; `stream` seeds the
/// estimators.
pub fn blowup_monitors(
    view: &InterfaceView,
    laws: &ConstitutiveLaws,
    kin: &Kinematics,
    udot: Option<&VectorGrid>,
    thresholds: &MonitorThresholds,
    stream: u64,
) -> Result<BlowupReport> {
    let state = view.state;
    let rho = state.rho();
    let mut rep = basic_monitors(laws, state.t, rho, &state.u, kin, udot);
    let rho_jumps = view.jumps("rho", rho);
    let small = viscosity_smallness(view, laws, &rho_jumps, stream)?;
    let p_ref = laws.p_ref();
    let pressure = view.piecewise_norm(rho, &|r| laws.p(r) - p_ref, stream + 10);
    rep.c_gamma = Some(small.geometry.c_gamma);
    rep.grad_gamma = Some(small.geometry.grad_gamma_inf + small.geometry.grad_gamma_holder);
    rep.pressure_pw = Some(pressure.norm());
    rep.smallness = Some(small);
    check(&mut rep, thresholds);
    Ok(rep)
}

/// Fills `breached` from the thresholds.
pub fn check(rep: &mut BlowupReport, th: &MonitorThresholds) {
    let pairs = [
        ("c_gamma", rep.c_gamma, th.c_gamma),
        ("grad_gamma", rep.grad_gamma, th.grad_gamma),
        ("inv_rho_min", Some(rep.inv_rho_min), th.inv_rho_min),
        ("inv_mu_min", Some(rep.inv_mu_min), th.inv_mu_min),
        ("u_h1", Some(rep.u_h1), th.u_h1),
        ("rho_udot", rep.rho_udot, th.rho_udot),
        ("pressure_pw", rep.pressure_pw, th.pressure_pw),
        ("composite", rep.composite(), th.composite),
        ("band_proximity", Some(rep.band_proximity), th.band_proximity),
    ];
    rep.breached = pairs
        .iter()
        .filter_map(|(name, v, lim)| match (v, lim) {
            (Some(v), Some(lim)) if !(*v <= *lim) => Some(name.to_string()),
            _ => None,
        })
        .collect();
}
