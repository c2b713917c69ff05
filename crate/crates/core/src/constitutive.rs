//! Pressure and viscosity laws, the damped variable `f(rho)`, potential
//! energies `H_l` and the jump-ratio bounds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// User-supplied law: returns `(value, derivative)` at `rho`.
pub type LawFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PressureLaw {
    /// `P = a rho^gamma`
    Gamma { a: f64, gamma: f64 },
    #[serde(skip)]
    Custom(LawFn),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViscosityLaw {
    Constant {
        mu: f64,
    },
    /// `mu = mu_ref + eps (rho - rho_ref)`, with `mu_ref` the value at the
    /// reference density.
    Affine {
        mu_ref: f64,
        eps: f64,
    },
    #[serde(skip)]
    Custom(LawFn),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BulkLaw {
    Constant {
        lambda: f64,
    },
    /// `lambda = b rho^beta`
    Power {
        b: f64,
        beta: f64,
    },
    #[serde(skip)]
    Custom(LawFn),
}

impl fmt::Debug for PressureLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gamma { a, gamma } => write!(f, "Gamma {{ a: {a}, gamma: {gamma} }}"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl fmt::Debug for ViscosityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { mu } => write!(f, "Constant {{ mu: {mu} }}"),
            Self::Affine { mu_ref, eps } => write!(f, "Affine {{ mu_ref: {mu_ref}, eps: {eps} }}"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl fmt::Debug for BulkLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { lambda } => write!(f, "Constant {{ lambda: {lambda} }}"),
            Self::Power { b, beta } => write!(f, "Power {{ b: {b}, beta: {beta} }}"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Complete set of laws selected by a configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LawPreset {
    pub pressure: PressureLaw,
    pub viscosity: ViscosityLaw,
    pub bulk: BulkLaw,
}

impl LawPreset {
    /// `P = a rho`, `mu = a rho / 2`, `lambda = 0`, so that `P - P~ = f(rho)`.
    pub fn proportional(a: f64, rho_ref: f64) -> Self {
        Self {
            pressure: PressureLaw::Gamma { a, gamma: 1.0 },
            viscosity: ViscosityLaw::Affine {
                mu_ref: 0.5 * a * rho_ref,
                eps: 0.5 * a,
            },
            bulk: BulkLaw::Constant { lambda: 0.0 },
        }
    }

    pub fn constant_viscosity(a: f64, gamma: f64, mu: f64, lambda: f64) -> Self {
        Self {
            pressure: PressureLaw::Gamma { a, gamma },
            viscosity: ViscosityLaw::Constant { mu },
            bulk: BulkLaw::Constant { lambda },
        }
    }
}

/// Difference-quotient bounds for the jump decay estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuBounds {
    pub low: f64,
    pub high: f64,
    /// Largest pressure quotient alone (before dominating the viscosity ones).
    pub pressure_high: f64,
    pub mu_high: f64,
    pub lambda_high: f64,
    /// Number of sample points per axis of the pair grid.
    pub resolution: usize,
}

#[derive(Debug, Clone)]
pub struct ConstitutiveLaws {
    preset: LawPreset,
    rho_ref: f64,
    band: [f64; 2],
    p_ref: f64,
    mu_ref: f64,
    lambda_ref: f64,
    f_range: [f64; 2],
}

/// Band of admissible densities derived from initial bounds, `[lo / 4, 4 hi]`.
pub fn default_band(rho_min0: f64, rho_max0: f64) -> [f64; 2] {
    [rho_min0 / 4.0, 4.0 * rho_max0]
}

const VALIDATION_SAMPLES: usize = 1000;

impl ConstitutiveLaws {
    pub fn new(preset: LawPreset, rho_ref: f64, band: [f64; 2]) -> Result<Self> {
        let [lo, hi] = band;
        if !(lo > 0.0 && lo < rho_ref && rho_ref < hi && hi.is_finite()) {
            return Err(Error::InvalidLaw(format!(
                "need 0 < lo < rho_ref < hi, got lo={lo} rho_ref={rho_ref} hi={hi}"
            )));
        }
        let mut laws = Self {
            preset,
            rho_ref,
            band,
            p_ref: 0.0,
            mu_ref: 0.0,
            lambda_ref: 0.0,
            f_range: [0.0, 0.0],
        };
        laws.p_ref = laws.p(rho_ref);
        laws.mu_ref = laws.mu(rho_ref);
        laws.lambda_ref = laws.lambda(rho_ref);
        for k in 0..=VALIDATION_SAMPLES {
            let rho = lo + (hi - lo) * k as f64 / VALIDATION_SAMPLES as f64;
            let (p, dp) = laws.pressure(rho);
            let mu = laws.mu(rho);
            let la = laws.lambda(rho);
            if !(p.is_finite() && dp.is_finite() && mu.is_finite() && la.is_finite()) {
                return Err(Error::InvalidLaw(format!(
                    "non-finite law value at rho={rho}"
                )));
            }
            if dp <= 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "P'({rho}) = {dp} is not positive"
                )));
            }
            if mu <= 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "mu({rho}) = {mu} is not positive"
                )));
            }
            if la < 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "lambda({rho}) = {la} is negative"
                )));
            }
        }
        laws.f_range = [laws.f_raw(lo), laws.f_raw(hi)];
        Ok(laws)
    }

    pub fn preset(&self) -> &LawPreset {
        &self.preset
    }

    pub fn rho_ref(&self) -> f64 {
        self.rho_ref
    }

    pub fn band(&self) -> [f64; 2] {
        self.band
    }

    pub fn p_ref(&self) -> f64 {
        self.p_ref
    }

    pub fn mu_ref(&self) -> f64 {
        self.mu_ref
    }

    pub fn lambda_ref(&self) -> f64 {
        self.lambda_ref
    }

    /// `f([lo, hi])`.
    pub fn f_range(&self) -> [f64; 2] {
        self.f_range
    }

    pub fn in_band(&self, rho: f64) -> bool {
        rho >= self.band[0] && rho <= self.band[1]
    }

    fn check_band(&self, rho: f64) -> Result<()> {
        if self.in_band(rho) {
            Ok(())
        } else {
            Err(Error::OutOfBand {
                rho,
                lo: self.band[0],
                hi: self.band[1],
            })
        }
    }

    /// `(P, P')`
    #[inline]
    pub fn pressure(&self, rho: f64) -> (f64, f64) {
        match &self.preset.pressure {
            PressureLaw::Gamma { a, gamma } => {
                let p = a * rho.powf(*gamma);
                (p, gamma * p / rho)
            }
            PressureLaw::Custom(f) => f(rho),
        }
    }

    #[inline]
    pub fn p(&self, rho: f64) -> f64 {
        match &self.preset.pressure {
            PressureLaw::Gamma { a, gamma } => {
                if *gamma == 1.0 {
                    a * rho
                } else {
                    a * rho.powf(*gamma)
                }
            }
            PressureLaw::Custom(f) => f(rho).0,
        }
    }

    #[inline]
    pub fn dp(&self, rho: f64) -> f64 {
        self.pressure(rho).1
    }

    #[inline]
    pub fn viscosity(&self, rho: f64) -> (f64, f64) {
        match &self.preset.viscosity {
            ViscosityLaw::Constant { mu } => (*mu, 0.0),
            ViscosityLaw::Affine { mu_ref, eps } => (mu_ref + eps * (rho - self.rho_ref), *eps),
            ViscosityLaw::Custom(f) => f(rho),
        }
    }

    #[inline]
    pub fn mu(&self, rho: f64) -> f64 {
        self.viscosity(rho).0
    }

    #[inline]
    pub fn dmu(&self, rho: f64) -> f64 {
        self.viscosity(rho).1
    }

    #[inline]
    pub fn bulk(&self, rho: f64) -> (f64, f64) {
        match &self.preset.bulk {
            BulkLaw::Constant { lambda } => (*lambda, 0.0),
            BulkLaw::Power { b, beta } => {
                let v = b * rho.powf(*beta);
                (v, beta * v / rho)
            }
            BulkLaw::Custom(f) => f(rho),
        }
    }

    #[inline]
    pub fn lambda(&self, rho: f64) -> f64 {
        self.bulk(rho).0
    }

    #[inline]
    pub fn dlambda(&self, rho: f64) -> f64 {
        self.bulk(rho).1
    }

    /// True when `mu` does not depend on `rho`.
    pub fn constant_mu(&self) -> bool {
        match &self.preset.viscosity {
            ViscosityLaw::Constant { .. } => true,
            ViscosityLaw::Affine { eps, .. } => *eps == 0.0,
            ViscosityLaw::Custom(_) => false,
        }
    }

    pub fn constant_lambda(&self) -> bool {
        match &self.preset.bulk {
            BulkLaw::Constant { .. } => true,
            BulkLaw::Power { b, beta } => *b == 0.0 || *beta == 0.0,
            BulkLaw::Custom(_) => false,
        }
    }

    /// `f'(rho) = (2 mu + lambda) / rho`.
    #[inline]
    pub fn df(&self, rho: f64) -> f64 {
        (2.0 * self.mu(rho) + self.lambda(rho)) / rho
    }

    /// `f(rho) = int_{rho_ref}^{rho} (2 mu(s) + lambda(s)) / s ds`, closed form
    /// for the presets, adaptive quadrature otherwise.
    pub fn f_of_rho(&self, rho: f64) -> Result<f64> {
        self.check_band(rho)?;
        Ok(self.f_raw(rho))
    }

    /// `f` without the band check.
    #[inline]
    pub fn f_raw(&self, rho: f64) -> f64 {
        let r0 = self.rho_ref;
        let ln = (rho / r0).ln();
        let visc = match &self.preset.viscosity {
            ViscosityLaw::Constant { mu } => 2.0 * mu * ln,
            ViscosityLaw::Affine { mu_ref, eps } => {
                2.0 * (mu_ref - eps * r0) * ln + 2.0 * eps * (rho - r0)
            }
            ViscosityLaw::Custom(f) => {
                quad::integrate(|s| 2.0 * f(s).0 / s, r0, rho, 1e-13 * (1.0 + ln.abs()))
            }
        };
        let bulk = match &self.preset.bulk {
            BulkLaw::Constant { lambda } => lambda * ln,
            BulkLaw::Power { b, beta } => {
                if *beta == 0.0 {
                    b * ln
                } else {
                    b * (rho.powf(*beta) - r0.powf(*beta)) / beta
                }
            }
            BulkLaw::Custom(f) => {
                quad::integrate(|s| f(s).0 / s, r0, rho, 1e-13 * (1.0 + ln.abs()))
            }
        };
        visc + bulk
    }

    /// Inverse of `f` on the band.
    pub fn f_inverse(&self, y: f64) -> Result<f64> {
        self.f_inverse_from(y, None)
    }

    /// Inverse of `f` started from an optional nearby guess (warm start).
    pub fn f_inverse_from(&self, y: f64, guess: Option<f64>) -> Result<f64> {
        let [flo, fhi] = self.f_range;
        if !(y >= flo && y <= fhi) {
            return Err(Error::OutOfRange {
                value: y,
                lo: flo,
                hi: fhi,
            });
        }
        if y == 0.0 {
            return Ok(self.rho_ref);
        }
        let (mut lo, mut hi) = (self.band[0], self.band[1]);
        let mut rho = match guess {
            Some(g) if g > lo && g < hi => g,
            _ => self.rho_ref,
        };
        for _ in 0..100 {
            let r = self.f_raw(rho) - y;
            if r.abs() < 1e-13 * (1.0 + y.abs()) {
                return Ok(rho);
            }
            if r > 0.0 {
                hi = hi.min(rho);
            } else {
                lo = lo.max(rho);
            }
            let step = r / self.df(rho);
            let mut next = rho - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == rho {
                return Ok(rho);
            }
            rho = next;
        }
        Err(Error::NoConvergence(format!("f_inverse({y})")))
    }

    /// `H_l(rho) = rho int_{rho_ref}^{rho} s^-2 |P - P~|^{l-1} (P - P~) ds`.
    pub fn potential_energy(&self, rho: f64, l: f64) -> Result<f64> {
        self.check_band(rho)?;
        if l < 1.0 {
            return Err(Error::InvalidInput(format!("l must be >= 1, got {l}")));
        }
        Ok(self.potential_energy_raw(rho, l))
    }

    pub fn potential_energy_raw(&self, rho: f64, l: f64) -> f64 {
        let r0 = self.rho_ref;
        let pt = self.p_ref;
        if l == 1.0 {
            if let PressureLaw::Gamma { a, gamma } = self.preset.pressure {
                let inner = if gamma == 1.0 {
                    a * (rho / r0).ln()
                } else {
                    a * (rho.powf(gamma - 1.0) - r0.powf(gamma - 1.0)) / (gamma - 1.0)
                };
                return rho * (inner + pt * (1.0 / rho - 1.0 / r0));
            }
        }
        let integrand = |s: f64| {
            let d = self.p(s) - pt;
            d.abs().powf(l - 1.0) * d / (s * s)
        };
        let scale = (self.p(rho) - pt).abs().powf(l) / (rho * rho) * (rho - r0).abs() + 1e-300;
        rho * quad::integrate(integrand, r0, rho, 1e-13 * scale)
    }

    /// Pair-sampled bounds on `dP/df`, `|d mu/df|`, `|d lambda/df|` over the band.
    pub fn nu_bounds(&self, resolution: usize) -> Result<NuBounds> {
        let m = resolution.max(2);
        let [lo, hi] = self.band;
        let rho: Vec<f64> = (0..m)
            .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
            .collect();
        let p: Vec<f64> = rho.iter().map(|&r| self.p(r)).collect();
        let f: Vec<f64> = rho.iter().map(|&r| self.f_raw(r)).collect();
        let mu: Vec<f64> = rho.iter().map(|&r| self.mu(r)).collect();
        let la: Vec<f64> = rho.iter().map(|&r| self.lambda(r)).collect();
        for k in 1..m {
            if p[k] <= p[k - 1] {
                return Err(Error::InvalidLaw(format!(
                    "pressure not increasing between rho={} and rho={}",
                    rho[k - 1],
                    rho[k]
                )));
            }
        }
        let mut low = f64::INFINITY;
        let mut p_high: f64 = 0.0;
        let mut mu_high: f64 = 0.0;
        let mut la_high: f64 = 0.0;
        // Diagonal limits rho' -> rho of each quotient.
        for k in 0..m {
            let fp = self.df(rho[k]);
            let q = self.dp(rho[k]) / fp;
            low = low.min(q);
            p_high = p_high.max(q);
            mu_high = mu_high.max(self.dmu(rho[k]).abs() / fp);
            la_high = la_high.max(self.dlambda(rho[k]).abs() / fp);
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let df = f[j] - f[i];
                let q = (p[j] - p[i]) / df;
                low = low.min(q);
                p_high = p_high.max(q);
                mu_high = mu_high.max(((mu[j] - mu[i]) / df).abs());
                la_high = la_high.max(((la[j] - la[i]) / df).abs());
            }
        }
        Ok(NuBounds {
            low,
            high: p_high.max(mu_high).max(la_high),
            pressure_high: p_high,
            mu_high,
            lambda_high: la_high,
            resolution: m,
        })
    }
}
