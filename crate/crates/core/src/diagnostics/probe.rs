//! One-sided measurements at and around the interface: jumps at markers,
//! curve norms of jumps, piecewise Hoelder norms, and the viscosity
//! smallness composite built from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::ScalarGrid;
use crate::interface::{
    frak_p, geometry, holder_pw, jump_average, levelset_metrics, JumpSample, Side, SideClassifier, SidedSampler,
};
use crate::state::FluidState;

/// Probe and estimator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Hoelder exponent used by the estimators and the jump extrapolation.
    pub alpha: f64,
    /// Largest probe radius in grid cells.
    pub r0_cells: f64,
    /// The one-sided gradient fits reach `fit_scale * sqrt(n)` cells (at
    /// least 4.5). Shrinking like `sqrt(h)` balances the ringing of the grid
    /// velocity next to the kink, which decays like `h / distance`, against
    /// the bias of the fit.
    pub fit_scale: f64,
    /// Pair budget of each Hoelder estimate.
    pub holder_budget: usize,
    /// Largest pair distance of the Hoelder estimates, as a fraction of L.
    pub holder_cutoff: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { alpha: 0.5, r0_cells: 3.0, fit_scale: 0.53, holder_budget: 100_000, holder_cutoff: 0.125, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("probe.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.r0_cells > 2.0 && self.r0_cells.is_finite()) {
            return Err(Error::InvalidInput(format!("probe.r0_cells must exceed 2, got {}", self.r0_cells)));
        }
        if !(self.fit_scale > 0.0 && self.fit_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("probe.fit_scale must be positive, got {}", self.fit_scale)));
        }
        if self.holder_budget == 0 {
            return Err(Error::InvalidInput("probe.holder_budget must be positive".into()));
        }
        if !(self.holder_cutoff > 0.0 && self.holder_cutoff <= 0.5) {
            return Err(Error::InvalidInput(format!(
                "probe.holder_cutoff must lie in (0, 0.5], got {}",
                self.holder_cutoff
            )));
        }
        Ok(())
    }

    /// Radius in cells of the one-sided gradient fits on an `n` grid.
    pub fn fit_cells(&self, n: usize) -> f64 {
        (self.fit_scale * (n as f64).sqrt()).max(4.5)
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// `sup |g| + [g]_alpha` with the seminorm taken on each side separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseNorm {
    pub sup: f64,
    pub seminorm: f64,
}

impl PiecewiseNorm {
    pub fn norm(&self) -> f64 {
        self.sup + self.seminorm
    }
}

/// Norms of a per-marker quantity along the curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveNorms {
    pub linf: f64,
    pub l4: f64,
    pub l2: f64,
    /// Markers whose sample was invalid and left out.
    pub skipped: usize,
}

/// Read-only view of a state for one-sided sampling.
pub struct InterfaceView<'a> {
    pub state: &'a FluidState,
    pub sides: Vec<Side>,
    /// Sign-only classifier, for jump probes.
    pub sign: SideClassifier<'a>,
    /// Classifier with an ambiguity band of one cell, for Hoelder pairs.
    pub banded: SideClassifier<'a>,
    pub probe: ProbeConfig,
}

impl<'a> InterfaceView<'a> {
    pub fn new(state: &'a FluidState, probe: &ProbeConfig) -> Self {
        let h = state.l() / state.n() as f64;
        Self {
            state,
            sides: state.levelset.node_sides(),
            sign: SideClassifier::new(&state.levelset, 0.0),
            banded: SideClassifier::new(&state.levelset, h),
            probe: probe.clone(),
        }
    }

    pub fn h(&self) -> f64 {
        self.state.l() / self.state.n() as f64
    }

    pub fn sampler<'b>(&'b self, field: &'b ScalarGrid) -> SidedSampler<'b> {
        SidedSampler::new(field, &self.sides)
    }

    /// Jump samples of `field` at every marker.
    pub fn jumps(&self, name: &str, field: &ScalarGrid) -> Vec<JumpSample> {
        let v0 = field.values()[0];
        if field.values().iter().all(|&v| v == v0) {
            return (0..self.state.curve.len())
                .map(|i| JumpSample {
                    marker: i,
                    field: name.to_string(),
                    jump: 0.0,
                    average: v0,
                    plus: v0,
                    minus: v0,
                    error: 0.0,
                    valid: true,
                    radii_used: 0,
                })
                .collect();
        }
        let sampler = self.sampler(field);
        let eval = |x: [f64; 2], s: Side| sampler.sample(x, s);
        let classify = |x: [f64; 2]| self.sign.classify(x);
        let curve = &self.state.curve;
        let normals = curve.normals();
        let r0 = self.probe.r0_cells * self.h();
        (0..curve.len())
            .map(|i| {
                jump_average(name, &eval, &classify, i, curve.points()[i], normals[i], r0, self.probe.alpha)
            })
            .collect()
    }

    /// Curve norms of `values[i]` over the markers with `valid[i]`.
    pub fn curve_norms(&self, values: &[f64], valid: &[bool]) -> CurveNorms {
        let w = self.state.curve.marker_weights();
        let mut out = CurveNorms::default();
        let (mut s4, mut s2) = (0.0, 0.0);
        for i in 0..values.len() {
            if !valid[i] || !values[i].is_finite() {
                out.skipped += 1;
                continue;
            }
            let a = values[i].abs();
            out.linf = out.linf.max(a);
            s4 += w[i] * a.powi(4);
            s2 += w[i] * a * a;
        }
        out.l4 = s4.powf(0.25);
        out.l2 = s2.sqrt();
        out
    }

    pub fn jump_norms(&self, samples: &[JumpSample]) -> CurveNorms {
        let v: Vec<f64> = samples.iter().map(|s| s.jump).collect();
        let ok: Vec<bool> = samples.iter().map(|s| s.valid).collect();
        self.curve_norms(&v, &ok)
    }

    /// Piecewise Hoelder norm of `g(field)`; `stream` separates the random
    /// streams of different estimates.
    pub fn piecewise_norm(&self, field: &ScalarGrid, g: &(dyn Fn(f64) -> f64 + Sync), stream: u64) -> PiecewiseNorm {
        let sup = field.values().iter().map(|&v| g(v).abs()).fold(0.0, f64::max);
        PiecewiseNorm { sup, seminorm: self.seminorm(field, g, stream) }
    }

    /// Max over both sides of the sampled Hoelder seminorm of `g(field)`.
    pub fn seminorm(&self, field: &ScalarGrid, g: &(dyn Fn(f64) -> f64 + Sync), stream: u64) -> f64 {
        let first = g(field.values()[0]);
        if field.values().iter().all(|&v| g(v) == first) {
            return 0.0;
        }
        let sampler = self.sampler(field);
        let eval = |x: [f64; 2], s: Side| g(sampler.sample(x, s));
        let h = self.h();
        let cutoff = (self.probe.holder_cutoff * self.state.l()).max(4.0 * h);
        let mut rng = self.probe.rng(stream);
        [Side::Inside, Side::Outside]
            .iter()
            .map(|&side| {
                holder_pw(
                    &eval,
                    &self.banded,
                    &self.state.curve,
                    side,
                    self.probe.alpha,
                    cutoff,
                    4.0 * h,
                    self.probe.holder_budget,
                    &mut rng,
                )
                .value
            })
            .fold(0.0, f64::max)
    }
}

/// Geometry factor `P_gamma + ell_phi^(-alpha)` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryFactor {
    pub length: f64,
    pub c_gamma: f64,
    pub grad_gamma_inf: f64,
    pub grad_gamma_holder: f64,
    pub frak_p: f64,
    pub ell: f64,
    pub factor: f64,
}

pub fn geometry_factor(view: &InterfaceView, stream: u64) -> Result<GeometryFactor> {
    let alpha = view.probe.alpha;
    let g = geometry(&view.state.curve, alpha)?;
    let mut rng = view.probe.rng(stream);
    let m = levelset_metrics(&view.state.levelset, &view.state.curve, alpha, view.probe.holder_budget, &mut rng)?;
    let p = frak_p(&g);
    Ok(GeometryFactor {
        length: g.length,
        c_gamma: g.c_gamma,
        grad_gamma_inf: g.grad_sup,
        grad_gamma_holder: g.grad_holder,
        frak_p: p,
        ell: m.ell,
        factor: p + m.ell.powf(-alpha),
    })
}

/// The viscosity smallness expression
///
/// ```text
/// [1 + |lambda|_{C^a_pw} + G |[lambda]|_inf] |mu - mu~|_{C^a_pw}
///   + G [ |[mu]|_inf + |([mu], [lambda])|_inf |1 - mu~/<mu>|_inf ]
/// ```
///
/// with `G = P_gamma + ell^(-alpha)`, jumps taken along the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscositySmallness {
    pub geometry: GeometryFactor,
    pub lambda_seminorm: f64,
    pub mu_deviation: PiecewiseNorm,
    pub jump_mu_inf: f64,
    pub jump_lambda_inf: f64,
    pub jump_pair_inf: f64,
    pub average_ratio_inf: f64,
    pub composite: f64,
}

/// `rho_jumps` are the density samples at the markers; the jumps of
/// `mu(rho)` and `lambda(rho)` are evaluated from their one-sided limits.
pub fn viscosity_smallness(
    view: &InterfaceView,
    laws: &ConstitutiveLaws,
    rho_jumps: &[JumpSample],
    stream: u64,
) -> Result<ViscositySmallness> {
    let geometry = geometry_factor(view, stream)?;
    let rho = &view.state.recon.rho;
    let mu_ref = laws.mu_ref();
    let lambda_seminorm = if laws.constant_lambda() {
        0.0
    } else {
        view.seminorm(rho, &|r| laws.lambda(r), stream + 1)
    };
    let mu_deviation = if laws.constant_mu() {
        let sup = rho.values().iter().map(|&r| (laws.mu(r) - mu_ref).abs()).fold(0.0, f64::max);
        PiecewiseNorm { sup, seminorm: 0.0 }
    } else {
        view.piecewise_norm(rho, &|r| laws.mu(r) - mu_ref, stream + 2)
    };
    let (mut jm, mut jl, mut jp, mut avg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in rho_jumps.iter().filter(|s| s.valid) {
        let dmu = laws.mu(s.plus) - laws.mu(s.minus);
        let dlam = laws.lambda(s.plus) - laws.lambda(s.minus);
        let mean_mu = 0.5 * (laws.mu(s.plus) + laws.mu(s.minus));
        jm = jm.max(dmu.abs());
        jl = jl.max(dlam.abs());
        jp = jp.max(dmu.hypot(dlam));
        avg = avg.max((1.0 - mu_ref / mean_mu).abs());
    }
    let g = geometry.factor;
    let composite = (1.0 + lambda_seminorm + g * jl) * mu_deviation.norm() + g * (jm + jp * avg);
    Ok(ViscositySmallness {
        geometry,
        lambda_seminorm,
        mu_deviation,
        jump_mu_inf: jm,
        jump_lambda_inf: jl,
        jump_pair_inf: jp,
        average_ratio_inf: avg,
        composite,
    })
}
