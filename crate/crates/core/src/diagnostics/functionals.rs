//! Running values of the higher-order functionals
//!
//! ```text
//! A1 = sup |grad u|^2 + int |sqrt(rho) u'|^2
//! A2 = sup s |sqrt(rho) u'|^2 + int s |grad u'|^2
//! A3 = sup s^2 |grad u'|^2 + int s^2 |sqrt(rho) u''|^2
//! theta = sup |f(rho)|^4_pw + int [ |f(rho)|^4_pw + s^r |grad u|^4_pw ]
//! ```
//!
//! with `s = sigma(t) = min(1, t)`, `r = 1 + 2 alpha` and `'` the material
//! derivative. Each integrand arrives as its own time series (the
//! derivatives lag the velocity by one or two steps) and is integrated by
//! the trapezoidal rule.

use serde::{Deserialize, Serialize};

pub fn sigma(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

pub fn r_alpha(alpha: f64) -> f64 {
    1.0 + 2.0 * alpha
}

/// Trapezoidal integral of a sampled nonnegative quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningIntegral {
    pub total: f64,
    last: Option<(f64, f64)>,
}

impl RunningIntegral {
    pub fn push(&mut self, t: f64, v: f64) {
        if let Some((t0, v0)) = self.last {
            if t > t0 {
                self.total += 0.5 * (t - t0) * (v0 + v);
            }
        }
        self.last = Some((t, v));
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last.map(|p| p.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningSup {
    pub value: f64,
}

impl RunningSup {
    pub fn push(&mut self, v: f64) {
        self.value = self.value.max(v);
    }
}

/// One sample time. Entries are `None` when not yet available.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HoffSample {
    pub t: f64,
    /// `|grad u|^2_{L^2}`
    pub grad_u: Option<f64>,
    /// `|sqrt(rho) u'|^2_{L^2}`
    pub rho_udot: Option<f64>,
    /// `|grad u'|^2_{L^2}`
    pub grad_udot: Option<f64>,
    /// `|sqrt(rho) u''|^2_{L^2}`
    pub rho_uddot: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HoffFunctionals {
    pub sup_grad_u: RunningSup,
    pub int_rho_udot: RunningIntegral,
    pub sup_rho_udot: RunningSup,
    pub int_grad_udot: RunningIntegral,
    pub sup_grad_udot: RunningSup,
    pub int_rho_uddot: RunningIntegral,
}

impl HoffFunctionals {
    pub fn push(&mut self, s: &HoffSample) {
        let w = sigma(s.t);
        if let Some(g) = s.grad_u {
            self.sup_grad_u.push(g);
        }
        if let Some(a) = s.rho_udot {
            self.int_rho_udot.push(s.t, a);
            self.sup_rho_udot.push(w * a);
        }
        if let Some(b) = s.grad_udot {
            self.int_grad_udot.push(s.t, w * b);
            self.sup_grad_udot.push(w * w * b);
        }
        if let Some(c) = s.rho_uddot {
            self.int_rho_uddot.push(s.t, w * w * c);
        }
    }

    pub fn a1(&self) -> f64 {
        self.sup_grad_u.value + self.int_rho_udot.total
    }

    pub fn a2(&self) -> f64 {
        self.sup_rho_udot.value + self.int_grad_udot.total
    }

    pub fn a3(&self) -> f64 {
        self.sup_grad_udot.value + self.int_rho_uddot.total
    }
}

/// Running `theta`. Samples whose estimates failed are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFunctional {
    pub alpha: f64,
    pub sup_f: RunningSup,
    pub integral: RunningIntegral,
    pub skipped: usize,
}

impl ThetaFunctional {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, sup_f: RunningSup::default(), integral: RunningIntegral::default(), skipped: 0 }
    }

    /// `f_norm` and `grad_norm` are the piecewise Hoelder norms of `f(rho)`
    /// and `grad u` at time `t`.
    pub fn push(&mut self, t: f64, f_norm: f64, grad_norm: f64) {
        if !(f_norm.is_finite() && grad_norm.is_finite()) {
            self.skipped += 1;
            return;
        }
        let f4 = f_norm.powi(4);
        self.sup_f.push(f4);
        self.integral.push(t, f4 + sigma(t).powf(r_alpha(self.alpha)) * grad_norm.powi(4));
    }

    pub fn value(&self) -> f64 {
        self.sup_f.value + self.integral.total
    }
}
