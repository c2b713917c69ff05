//! Exponential decay of the density jump: least-squares slope of
//! `log |[f(rho)]|_{L^p(C)}` against the bound slope
//! `-nu_low + (6 nu_high + 1/p) int_0^t |grad u|_inf / t`.

use serde::{Deserialize, Serialize};

use crate::constitutive::NuBounds;
use crate::error::{Error, Result};

/// Jumps below this are treated as fully decayed and end the fit window.
pub const DECAYED: f64 = 1e-12;

/// Minimum number of samples in the fit window.
pub const MIN_SAMPLES: usize = 20;

/// One sample of the decay history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub t: f64,
    /// `|[f(rho)]|_{L^p(C)}`.
    pub norm: f64,
    /// `int_0^t |grad u|_inf`.
    pub grad_integral: f64,
}

/// Marker values of `|[f(rho)]|` at one time, invalid markers left out,
/// with their arclength weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpProfile {
    pub t: f64,
    pub grad_integral: f64,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl JumpProfile {
    /// Builds the profile from signed marker jumps and validity flags.
    pub fn new(t: f64, grad_integral: f64, jumps: &[f64], valid: &[bool], weights: &[f64]) -> Self {
        let (values, weights) = jumps
            .iter()
            .zip(valid)
            .zip(weights)
            .filter(|((j, ok), _)| **ok && j.is_finite())
            .map(|((j, _), w)| (j.abs(), *w))
            .unzip();
        Self { t, grad_integral, values, weights }
    }

    /// `|[f]|_{L^p(C)}`; `p = f64::INFINITY` gives the max.
    pub fn norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, &v| m.max(v));
        }
        let s: f64 = self.values.iter().zip(&self.weights).map(|(v, w)| w * v.powf(p)).sum();
        s.powf(1.0 / p)
    }
}

pub fn decay_history(profiles: &[JumpProfile], p: f64) -> Vec<DecaySample> {
    profiles
        .iter()
        .map(|j| DecaySample { t: j.t, norm: j.norm(p), grad_integral: j.grad_integral })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub p: f64,
    pub fitted_rate: f64,
    pub predicted_rate: f64,
    /// Samples used after truncation.
    pub samples: usize,
    pub t_end: f64,
    pub pass: bool,
}

/// `p = f64::INFINITY` drops the `1/p` term. The fit passes when
/// `fitted <= predicted + 0.1 |predicted|`.
pub fn jump_decay_fit(history: &[DecaySample], nu: &NuBounds, p: f64) -> Result<DecayFit> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p must be at least 1, got {p}")));
    }
    let window: Vec<&DecaySample> = history.iter().take_while(|s| s.norm > DECAYED && s.norm.is_finite()).collect();
    if window.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "decay fit needs {MIN_SAMPLES} samples above {DECAYED}, got {}",
            window.len()
        )));
    }
    let m = window.len() as f64;
    let tm = window.iter().map(|s| s.t).sum::<f64>() / m;
    let ym = window.iter().map(|s| s.norm.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for s in &window {
        let dt = s.t - tm;
        sxy += dt * (s.norm.ln() - ym);
        sxx += dt * dt;
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidInput("decay fit needs distinct sample times".into()));
    }
    let fitted = sxy / sxx;
    let last = window[window.len() - 1];
    let first = window[0];
    let span = last.t - first.t;
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let predicted = -nu.low + (6.0 * nu.high + inv_p) * (last.grad_integral - first.grad_integral) / span;
    Ok(DecayFit {
        p,
        fitted_rate: fitted,
        predicted_rate: predicted,
        samples: window.len(),
        t_end: last.t,
        pass: fitted <= predicted + 0.1 * predicted.abs(),
    })
}
