//! Initial data: a density patch with piecewise Hoelder profiles, its level
//! set and marker curve, and the compatible initial velocity.
//!
//! The velocity actually used is the solution `u^d` of
//!
//! ```text
//! -div(2 mu(rho0) Du + (lambda(rho0) div u - P(rho0) + P~) I) + c u = -div(w_d * Pi0)
//! Pi0 = 2 mu(rho0) Du0 + (lambda(rho0) div u0 - P(rho0) + P~) I
//! c   = ||w_d * Pi0 - Pi0||_{L^2}
//! ```
//!
//! for a target `u0`, which makes `div Pi` square integrable at `t = 0`.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::diagnostics::probe::{viscosity_smallness, InterfaceView, PiecewiseNorm, ProbeConfig, ViscositySmallness};
use crate::error::{Error, Result};
use crate::grid::{periodic_delta, ScalarGrid, VectorGrid};
use crate::interface::{InterfaceCurve, LevelSet, Side};
use crate::quad::integrate;
use crate::spectral::Spectral;
use crate::state::{density_on_grid, FluidState, ParticleCloud, StepHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchShape {
    Circle {
        radius: f64,
    },
    /// Semi-axes `a` along x and `b` along y.
    Ellipse {
        a: f64,
        b: f64,
    },
    /// `r(theta) = radius (1 + sum amplitude cos(k theta + phase))`.
    Star {
        radius: f64,
        harmonics: Vec<Harmonic>,
    },
}

impl PatchShape {
    /// Boundary radius in direction `theta`.
    pub fn radius_at(&self, theta: f64) -> f64 {
        match self {
            PatchShape::Circle { radius } => *radius,
            PatchShape::Ellipse { a, b } => a * b / ((b * theta.cos()).powi(2) + (a * theta.sin()).powi(2)).sqrt(),
            PatchShape::Star { radius, harmonics } => {
                radius
                    * (1.0
                        + harmonics
                            .iter()
                            .map(|h| h.amplitude * (h.k as f64 * theta + h.phase).cos())
                            .sum::<f64>())
            }
        }
    }

    /// Length scale of the patch.
    pub fn mean_radius(&self) -> f64 {
        match self {
            PatchShape::Circle { radius } | PatchShape::Star { radius, .. } => *radius,
            PatchShape::Ellipse { a, b } => (a * b).sqrt(),
        }
    }

    fn radius_range(&self) -> (f64, f64) {
        (0..4096).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let r = self.radius_at(TAU * i as f64 / 4096.0);
            (lo.min(r), hi.max(r))
        })
    }

    pub fn max_radius(&self) -> f64 {
        self.radius_range().1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("patch.shape.{what}")));
        match self {
            PatchShape::Circle { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                return bad("radius must be positive")
            }
            PatchShape::Ellipse { a, b } if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) => {
                return bad("a and b must be positive")
            }
            PatchShape::Star { radius, harmonics } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("radius must be positive");
                }
                // A positive polar radius keeps the curve simple.
                let total: f64 = harmonics.iter().map(|h| h.amplitude.abs()).sum();
                if !(total < 0.9) {
                    return bad("harmonics must have total amplitude below 0.9");
                }
                if harmonics.iter().any(|h| h.k == 0) {
                    return bad("harmonics must have k >= 1");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// A cusp `amplitude (radius^alpha - min(|x - a|, radius)^alpha)` anchored
/// at the interface point in polar direction `anchor_angle`. Its
/// `alpha`-Hoelder seminorm is `|amplitude|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cusp {
    pub amplitude: f64,
    pub anchor_angle: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityProfile {
    pub base: f64,
    #[serde(default)]
    pub cusp: Option<Cusp>,
}

impl DensityProfile {
    pub fn constant(base: f64) -> Self {
        Self { base, cusp: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub shape: PatchShape,
    /// Patch center; the middle of the box when absent.
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    pub inside: DensityProfile,
    pub outside: DensityProfile,
    pub alpha: f64,
    pub rho_far: f64,
}

impl PatchSpec {
    /// Patch with piecewise-constant density.
    pub fn uniform(shape: PatchShape, rho_in: f64, rho_out: f64, alpha: f64) -> Self {
        Self {
            shape,
            center: None,
            inside: DensityProfile::constant(rho_in),
            outside: DensityProfile::constant(rho_out),
            alpha,
            rho_far: rho_out,
        }
    }

    pub fn center(&self, l: f64) -> [f64; 2] {
        self.center.unwrap_or([0.5 * l, 0.5 * l])
    }

    /// Distance from the center (nearest image) and polar angle.
    fn polar(&self, x: [f64; 2], l: f64) -> (f64, f64) {
        let c = self.center(l);
        let dx = periodic_delta(x[0], c[0], l);
        let dy = periodic_delta(x[1], c[1], l);
        (dx.hypot(dy), dy.atan2(dx))
    }

    /// `|x - c| / r(theta)`: below 1 inside the patch.
    pub fn shape_coordinate(&self, x: [f64; 2], l: f64) -> f64 {
        let (r, th) = self.polar(x, l);
        r / self.shape.radius_at(th)
    }

    pub fn is_inside(&self, x: [f64; 2], l: f64) -> bool {
        self.shape_coordinate(x, l) < 1.0
    }

    pub fn side(&self, x: [f64; 2], l: f64) -> Side {
        if self.is_inside(x, l) {
            Side::Inside
        } else {
            Side::Outside
        }
    }

    /// Point of the curve in polar direction `theta`.
    pub fn boundary_point(&self, theta: f64, l: f64) -> [f64; 2] {
        let c = self.center(l);
        let r = self.shape.radius_at(theta);
        [c[0] + r * theta.cos(), c[1] + r * theta.sin()]
    }

    fn cusp_value(&self, cusp: &Option<Cusp>, x: [f64; 2], l: f64) -> f64 {
        match cusp {
            None => 0.0,
            Some(c) => {
                let a = self.boundary_point(c.anchor_angle, l);
                let d = periodic_delta(x[0], a[0], l).hypot(periodic_delta(x[1], a[1], l));
                c.amplitude * (c.radius.powf(self.alpha) - d.min(c.radius).powf(self.alpha))
            }
        }
    }

    /// Initial density. Outside, the offset `base - rho_far` is tapered
    /// smoothly to zero over a distance `L/4` from the patch.
    pub fn rho0(&self, x: [f64; 2], l: f64) -> f64 {
        let (r, th) = self.polar(x, l);
        let rb = self.shape.radius_at(th);
        if r < rb {
            self.inside.base + self.cusp_value(&self.inside.cusp, x, l)
        } else {
            let w = 0.25 * l;
            let d = r - rb;
            let taper = if d >= w { 0.0 } else { (0.5 * PI * d / w).cos().powi(2) };
            self.rho_far + (self.outside.base - self.rho_far) * taper + self.cusp_value(&self.outside.cusp, x, l)
        }
    }

    /// `(R/2) tanh(2 (1 - |x - c| / r(theta)))` with `R` the mean radius.
    pub fn levelset_value(&self, x: [f64; 2], l: f64) -> f64 {
        let r = self.shape.mean_radius();
        0.5 * r * (2.0 * (1.0 - self.shape_coordinate(x, l))).tanh()
    }

    /// Markers on the analytic curve, evenly spaced in the polar angle and
    /// redistributed by arclength when the spacing is too uneven.
    pub fn curve(&self, markers: usize, l: f64) -> Result<InterfaceCurve> {
        let c = InterfaceCurve::from_parametric(markers, |t| self.boundary_point(TAU * t, l))?;
        if c.spacing_ratio() > 3.0 {
            c.reparameterize()
        } else {
            Ok(c)
        }
    }

    pub fn validate(&self, l: f64) -> Result<()> {
        self.shape.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("patch.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.rho_far > 0.0 && self.rho_far.is_finite()) {
            return Err(Error::InvalidInput(format!("patch.rho_far must be positive, got {}", self.rho_far)));
        }
        for (name, p) in [("inside", &self.inside), ("outside", &self.outside)] {
            if !(p.base > 0.0 && p.base.is_finite()) {
                return Err(Error::InvalidInput(format!("patch.{name}.base must be positive, got {}", p.base)));
            }
            if let Some(c) = &p.cusp {
                if !(c.radius > 0.0 && c.radius.is_finite() && c.amplitude.is_finite() && c.anchor_angle.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "patch.{name}.cusp needs a positive radius and finite amplitude and anchor"
                    )));
                }
                let extreme = p.base + c.amplitude.min(0.0) * c.radius.powf(self.alpha);
                if !(extreme > 0.0) {
                    return Err(Error::InvalidInput(format!("patch.{name}.cusp drives the density below zero")));
                }
            }
        }
        if self.shape.max_radius() > 0.25 * l {
            return Err(Error::InvalidInput(format!(
                "patch.shape must fit within L/4 = {} of its center",
                0.25 * l
            )));
        }
        Ok(())
    }
}

/// `amplitude exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTerm {
    pub amplitude: f64,
    /// The middle of the box when absent.
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    pub width: f64,
}

impl GaussianTerm {
    /// Value and gradient.
    fn eval(&self, x: [f64; 2], l: f64) -> (f64, [f64; 2]) {
        let c = self.center.unwrap_or([0.5 * l, 0.5 * l]);
        let dx = periodic_delta(x[0], c[0], l);
        let dy = periodic_delta(x[1], c[1], l);
        let w2 = self.width * self.width;
        let v = self.amplitude * (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
        (v, [-v * dx / w2, -v * dy / w2])
    }
}

/// Target velocity `u0 = grad^perp psi + grad chi` with `psi` and `chi`
/// sums of Gaussians, and the mollifier width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialVelocitySpec {
    #[serde(default)]
    pub stream: Vec<GaussianTerm>,
    #[serde(default)]
    pub potential: Vec<GaussianTerm>,
    pub delta: f64,
}

impl InitialVelocitySpec {
    pub fn at_rest(delta: f64) -> Self {
        Self { stream: Vec::new(), potential: Vec::new(), delta }
    }

    pub fn value(&self, x: [f64; 2], l: f64) -> [f64; 2] {
        let mut u = [0.0, 0.0];
        for t in &self.stream {
            let (_, g) = t.eval(x, l);
            u[0] -= g[1];
            u[1] += g[0];
        }
        for t in &self.potential {
            let (_, g) = t.eval(x, l);
            u[0] += g[0];
            u[1] += g[1];
        }
        u
    }

    pub fn target(&self, n: usize, l: f64) -> VectorGrid {
        VectorGrid::from_fn(n, l, |x, y| self.value([x, y], l))
    }

    pub fn validate(&self, l: f64) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("velocity.delta must lie in (0, 1), got {}", self.delta)));
        }
        for (name, terms) in [("stream", &self.stream), ("potential", &self.potential)] {
            for (i, t) in terms.iter().enumerate() {
                // Keeps the periodic images negligible.
                if !(t.width > 0.0 && t.width <= l / 12.0) {
                    return Err(Error::InvalidInput(format!(
                        "velocity.{name}[{i}].width must lie in (0, L/12], got {}",
                        t.width
                    )));
                }
                if !t.amplitude.is_finite() {
                    return Err(Error::InvalidInput(format!("velocity.{name}[{i}].amplitude must be finite")));
                }
            }
        }
        Ok(())
    }
}

/// Radial mollifier `w_d(x) = d^-2 w(|x| / d)` with `w` a truncated
/// Gaussian shifted to vanish at `r = 1`, normalized to unit integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub delta: f64,
}

impl Mollifier {
    const SIGMA: f64 = 1.0 / 3.0;

    pub fn profile(r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let s2 = 2.0 * Self::SIGMA * Self::SIGMA;
        (-r * r / s2).exp() - (-1.0 / s2).exp()
    }

    /// Fourier transform at wavenumber magnitude `k`, equal to 1 at `k = 0`:
    /// `int_0^1 w(r) J0(k d r) r dr / int_0^1 w(r) r dr`.
    pub fn symbol(&self, k: f64) -> f64 {
        let s = k * self.delta;
        let num = integrate(|r| Self::profile(r) * libm::j0(s * r) * r, 0.0, 1.0, 1e-14);
        num / Self::mass()
    }

    fn mass() -> f64 {
        integrate(|r| Self::profile(r) * r, 0.0, 1.0, 1e-15)
    }

    /// Symbol on every mode of the grid.
    pub fn multiplier(&self, sp: &Spectral) -> Vec<f64> {
        let n = sp.n();
        let modes = sp.modes();
        let base = TAU / sp.l();
        let mut cache: HashMap<i64, f64> = HashMap::new();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let m2 = modes[i] * modes[i] + modes[j] * modes[j];
                let v = *cache.entry(m2).or_insert_with(|| self.symbol(base * (m2 as f64).sqrt()));
                out[i * n + j] = v;
            }
        }
        out
    }
}

fn apply_real_multiplier(sp: &Spectral, g: &ScalarGrid, m: &[f64]) -> Result<ScalarGrid> {
    let mut hat = sp.forward(g)?;
    for (c, &w) in hat.iter_mut().zip(m) {
        *c *= w;
    }
    Ok(sp.inverse(hat))
}

/// `u -> -div(2 mu Du + lambda div u I) + c u` with spectral derivatives,
/// restricted to the modes off the Nyquist lines. On those lines a first
/// derivative has no symmetric symbol and the operator would leave an
/// odd-even mode almost uncontrolled. Symmetric and positive
/// semi-definite in the grid inner product.
struct ElasticOperator<'a> {
    sp: &'a Spectral,
    two_mu: ScalarGrid,
    lambda: ScalarGrid,
    c: f64,
}

impl ElasticOperator<'_> {
    fn apply(&self, u: &VectorGrid) -> Result<VectorGrid> {
        let sp = self.sp;
        let n = sp.n();
        let mut hat = [sp.forward(&u.c[0])?, sp.forward(&u.c[1])?];
        sp.drop_nyquist(&mut hat[0]);
        sp.drop_nyquist(&mut hat[1]);
        let d = |c: usize, axis: usize| {
            let mut v = hat[c].clone();
            for i in 0..n {
                for j in 0..n {
                    v[i * n + j] *= sp.derivative_symbol(axis, i, j);
                }
            }
            sp.inverse(v)
        };
        let (g00, g01, g10, g11) = (d(0, 0), d(0, 1), d(1, 0), d(1, 1));
        let div = g00.add(&g11);
        let ld = self.lambda.mul(&div);
        let s00 = sp.forward(&self.two_mu.mul(&g00).add(&ld))?;
        let s11 = sp.forward(&self.two_mu.mul(&g11).add(&ld))?;
        let s01 = sp.forward(&self.two_mu.mul(&g01.add(&g10)).scale(0.5))?;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        let mut b = a.clone();
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let (d0, d1) = (sp.derivative_symbol(0, i, j), sp.derivative_symbol(1, i, j));
                a[k] = -(d0 * s00[k] + d1 * s01[k]) + hat[0][k] * self.c;
                b[k] = -(d0 * s01[k] + d1 * s11[k]) + hat[1][k] * self.c;
            }
        }
        sp.drop_nyquist(&mut a);
        sp.drop_nyquist(&mut b);
        Ok(VectorGrid { c: [sp.inverse(a), sp.inverse(b)] })
    }
}

/// Inverse of the constant-coefficient operator
/// `mu~ |k|^2 I + (mu~ + lambda~) k k^T + c I`, mode by mode.
struct FourierPreconditioner<'a> {
    sp: &'a Spectral,
    mu: f64,
    lambda: f64,
    c: f64,
}

impl FourierPreconditioner<'_> {
    fn apply(&self, r: &VectorGrid) -> Result<VectorGrid> {
        let sp = self.sp;
        let n = sp.n();
        let mut a = sp.forward(&r.c[0])?;
        let mut b = sp.forward(&r.c[1])?;
        let ko = sp.k_odd();
        let beta = self.mu + self.lambda;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let (k0, k1) = (ko[i], ko[j]);
                let kk = k0 * k0 + k1 * k1;
                let alpha = self.mu * kk + self.c;
                if alpha <= 0.0 || i == n / 2 || j == n / 2 {
                    a[idx] = Complex64::new(0.0, 0.0);
                    b[idx] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let proj = (a[idx] * k0 + b[idx] * k1) * (beta / (alpha + beta * kk));
                a[idx] = (a[idx] - proj * k0) / alpha;
                b[idx] = (b[idx] - proj * k1) / alpha;
            }
        }
        Ok(VectorGrid { c: [sp.inverse(a), sp.inverse(b)] })
    }
}

/// Outcome of the elliptic solve for the initial velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySolve {
    #[serde(skip)]
    pub velocity: Option<VectorGrid>,
    pub delta: f64,
    pub c_delta: f64,
    pub iterations: usize,
    /// Final `||r|| / ||b||`, over the modes off the Nyquist lines.
    pub relative_residual: f64,
    pub rhs_norm: f64,
    pub pi_norm: f64,
    pub pressure_norm: f64,
    /// `||grad u^d||^2 / (||Pi0||^2 + ||P - P~||^2)`.
    pub bound_ratio: f64,
}

impl VelocitySolve {
    pub fn velocity(&self) -> &VectorGrid {
        self.velocity.as_ref().expect("velocity present after a solve")
    }
}

pub const SOLVE_TOLERANCE: f64 = 1e-8;
const STAGNATION_WINDOW: usize = 200;
const MAX_ITERATIONS: usize = 20_000;

/// `Pi0` for density `rho0` and velocity `u0`, as `[xx, xy, yy]`.
pub fn initial_stress(sp: &Spectral, laws: &ConstitutiveLaws, rho0: &ScalarGrid, u0: &VectorGrid) -> Result<[ScalarGrid; 3]> {
    let g = sp.velocity_gradient(u0)?;
    let div = g.trace();
    let p_ref = laws.p_ref();
    let iso = rho0.zip_map(&div, |r, d| laws.lambda(r) * d - (laws.p(r) - p_ref));
    let two_mu = rho0.map(|r| 2.0 * laws.mu(r));
    Ok([
        two_mu.mul(&g.c[0][0]).add(&iso),
        two_mu.mul(&g.c[0][1].add(&g.c[1][0])).scale(0.5),
        two_mu.mul(&g.c[1][1]).add(&iso),
    ])
}

fn stress_norm(s: &[ScalarGrid; 3]) -> f64 {
    (s[0].l2_norm().powi(2) + 2.0 * s[1].l2_norm().powi(2) + s[2].l2_norm().powi(2)).sqrt()
}

/// Solves for the compatible initial velocity `u^d` by preconditioned
/// conjugate gradients.
pub fn solve_initial_velocity(
    laws: &ConstitutiveLaws,
    rho0: &ScalarGrid,
    target: &VectorGrid,
    delta: f64,
) -> Result<VelocitySolve> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {delta}")));
    }
    rho0.check_same(&target.c[0])?;
    let n = rho0.n();
    let l = rho0.l();
    let sp = Spectral::new(n, l)?;
    let p_ref = laws.p_ref();

    let pi0 = initial_stress(&sp, laws, rho0, target)?;
    let w = Mollifier { delta }.multiplier(&sp);
    let smooth = [
        apply_real_multiplier(&sp, &pi0[0], &w)?,
        apply_real_multiplier(&sp, &pi0[1], &w)?,
        apply_real_multiplier(&sp, &pi0[2], &w)?,
    ];
    let diff = [smooth[0].sub(&pi0[0]), smooth[1].sub(&pi0[1]), smooth[2].sub(&pi0[2])];
    let c_delta = stress_norm(&diff);
    let pressure = rho0.map(|r| laws.p(r) - p_ref);

    // b = -div(w * Pi0) - grad(P - P~)
    let (s0, s1, s2) = (sp.forward(&smooth[0])?, sp.forward(&smooth[1])?, sp.forward(&smooth[2])?);
    let ph = sp.forward(&pressure)?;
    let mut b0 = vec![Complex64::new(0.0, 0.0); n * n];
    let mut b1 = b0.clone();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let (d0, d1) = (sp.derivative_symbol(0, i, j), sp.derivative_symbol(1, i, j));
            b0[k] = -(d0 * (s0[k] + ph[k]) + d1 * s1[k]);
            b1[k] = -(d0 * s1[k] + d1 * (s2[k] + ph[k]));
        }
    }
    sp.drop_nyquist(&mut b0);
    sp.drop_nyquist(&mut b1);
    let rhs = VectorGrid { c: [sp.inverse(b0), sp.inverse(b1)] };
    let rhs_norm = rhs.l2_norm();
    let pi_norm = stress_norm(&pi0);
    let pressure_norm = pressure.l2_norm();

    let two_mu = rho0.map(|r| 2.0 * laws.mu(r));
    let lambda = rho0.map(|r| laws.lambda(r));
    let op = ElasticOperator { sp: &sp, two_mu, lambda, c: c_delta };
    let pre = FourierPreconditioner { sp: &sp, mu: laws.mu_ref(), lambda: laws.lambda_ref(), c: c_delta };

    let mut u = VectorGrid::zeros(n, l);
    let mut iterations = 0;
    let mut rel = 0.0;
    if rhs_norm > 0.0 {
        let mut r = rhs.clone();
        let mut z = pre.apply(&r)?;
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        let mut window_start = 1.0;
        rel = 1.0;
        while rel >= SOLVE_TOLERANCE {
            if iterations >= MAX_ITERATIONS || (iterations > 0 && iterations % STAGNATION_WINDOW == 0 && rel > 0.1 * window_start) {
                let mu_min = two_mu_min(laws, rho0);
                let visc_max = rho0.values().iter().map(|&r| 2.0 * laws.mu(r) + laws.lambda(r)).fold(0.0, f64::max);
                return Err(Error::NoConvergence(format!(
                    "initial-velocity solve stagnated after {iterations} iterations at relative residual {rel:.3e}; \
                     coefficient ratio max(2mu+lambda)/min(mu) = {:.3e}, c_delta = {c_delta:.3e}",
                    visc_max / mu_min
                )));
            }
            if iterations % STAGNATION_WINDOW == 0 {
                window_start = rel;
            }
            let ap = op.apply(&p)?;
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                return Err(Error::NoConvergence(format!(
                    "initial-velocity operator lost positivity (p.Ap = {pap:.3e}) at iteration {iterations}"
                )));
            }
            let a = rz / pap;
            u.axpy(a, &p);
            r.axpy(-a, &ap);
            iterations += 1;
            rel = r.l2_norm() / rhs_norm;
            if rel < SOLVE_TOLERANCE {
                break;
            }
            z = pre.apply(&r)?;
            let rz_new = r.dot(&z);
            let beta = rz_new / rz;
            rz = rz_new;
            let mut np = z.clone();
            np.axpy(beta, &p);
            p = np;
        }
        // True residual, guarding against drift of the recursive one.
        let true_res = op.apply(&u)?.sub(&rhs).l2_norm() / rhs_norm;
        rel = rel.max(true_res);
        if rel >= SOLVE_TOLERANCE {
            return Err(Error::NoConvergence(format!(
                "initial-velocity solve: true relative residual {true_res:.3e} after {iterations} iterations"
            )));
        }
    }
    let g = sp.velocity_gradient(&u)?;
    let grad_sq: f64 = g.c.iter().flatten().map(|c| c.l2_norm().powi(2)).sum();
    let denom = pi_norm * pi_norm + pressure_norm * pressure_norm;
    let bound_ratio = if denom > 0.0 { grad_sq / denom } else { 0.0 };
    Ok(VelocitySolve {
        velocity: Some(u),
        delta,
        c_delta,
        iterations,
        relative_residual: rel,
        rhs_norm,
        pi_norm,
        pressure_norm,
        bound_ratio,
    })
}

fn two_mu_min(laws: &ConstitutiveLaws, rho: &ScalarGrid) -> f64 {
    rho.values().iter().map(|&r| laws.mu(r)).fold(f64::INFINITY, f64::min)
}

/// Grid, particle and marker resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub l: f64,
    #[serde(default = "default_per_axis")]
    pub particles_per_axis: usize,
    /// `4 n` clamped to `[64, 2048]` when absent.
    #[serde(default)]
    pub markers: Option<usize>,
}

fn default_per_axis() -> usize {
    2
}

impl GridSpec {
    pub fn new(n: usize, l: f64) -> Self {
        Self { n, l, particles_per_axis: 2, markers: None }
    }

    pub fn marker_count(&self) -> usize {
        self.markers.unwrap_or((4 * self.n).clamp(64, 2048))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 || !self.n.is_power_of_two() {
            return Err(Error::InvalidInput(format!("grid.n must be a power of two >= 8, got {}", self.n)));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::InvalidInput(format!("grid.l must be positive, got {}", self.l)));
        }
        if self.particles_per_axis == 0 || self.particles_per_axis > 8 {
            return Err(Error::InvalidInput("grid.particles_per_axis must lie in 1..=8".into()));
        }
        if let Some(m) = self.markers {
            if !(16..=2048).contains(&m) {
                return Err(Error::InvalidInput(format!("grid.markers must lie in 16..=2048, got {m}")));
            }
        }
        Ok(())
    }
}

/// Initial state with the record of its velocity solve.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub state: FluidState,
    pub solve: VelocitySolve,
}

pub fn build_initial_state(
    patch: &PatchSpec,
    vel: &InitialVelocitySpec,
    grid: &GridSpec,
    laws: &Arc<ConstitutiveLaws>,
) -> Result<FluidState> {
    Ok(build_initial_data(patch, vel, grid, laws)?.state)
}

/// Seeds particles with `f(rho0)`, builds the level set and markers from
/// the analytic shape, reconstructs the grid density and solves for the
/// compatible velocity.
pub fn build_initial_data(
    patch: &PatchSpec,
    vel: &InitialVelocitySpec,
    grid: &GridSpec,
    laws: &Arc<ConstitutiveLaws>,
) -> Result<InitialData> {
    grid.validate()?;
    patch.validate(grid.l)?;
    vel.validate(grid.l)?;
    let (n, l) = (grid.n, grid.l);
    let particles = ParticleCloud::seed(
        n,
        l,
        grid.particles_per_axis,
        laws,
        |x| patch.rho0(x, l),
        |x| patch.side(x, l),
    )?;
    let levelset = LevelSet::new(ScalarGrid::from_fn(n, l, |x, y| patch.levelset_value([x, y], l)));
    let curve = patch.curve(grid.marker_count(), l)?;
    let recon = density_on_grid(&particles, &levelset, laws)?;
    let target = vel.target(n, l);
    let solve = solve_initial_velocity(laws, &recon.rho, &target, vel.delta)?;
    let state = FluidState {
        t: 0.0,
        u: solve.velocity().clone(),
        particles,
        curve,
        levelset,
        recon,
        history: StepHistory::default(),
    };
    state.check(laws)?;
    Ok(InitialData { state, solve })
}

/// Size of the initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub u_h1_sq: f64,
    pub rho_l2: f64,
    pub rho_piecewise: PiecewiseNorm,
    pub jump_l4: f64,
    pub jump_linf: f64,
    pub invalid_markers: usize,
    /// `||u||_{H1}^2 + ||rho - rho~||_{L2 & C^a_pw}^2 + ||[rho]||_{L4 & L_inf(C)}^2`,
    /// intersection norms taken as sums.
    pub c0: f64,
    pub viscosity: ViscositySmallness,
}

pub fn smallness_report(state: &FluidState, laws: &ConstitutiveLaws, probe: &ProbeConfig) -> Result<SmallnessReport> {
    probe.validate()?;
    let sp = Spectral::new(state.n(), state.l())?;
    let u_h1_sq = sp.h1_norm_sq(&state.u.c[0])? + sp.h1_norm_sq(&state.u.c[1])?;
    let rho_ref = laws.rho_ref();
    let rho = &state.recon.rho;
    let rho_l2 = rho.map(|r| r - rho_ref).l2_norm();
    let view = InterfaceView::new(state, probe);
    let rho_piecewise = view.piecewise_norm(rho, &|r| r - rho_ref, 1);
    let jumps = view.jumps("rho", rho);
    let norms = view.jump_norms(&jumps);
    let viscosity = viscosity_smallness(&view, laws, &jumps, 16)?;
    let c0 = u_h1_sq + (rho_l2 + rho_piecewise.norm()).powi(2) + (norms.l4 + norms.linf).powi(2);
    Ok(SmallnessReport {
        u_h1_sq,
        rho_l2,
        rho_piecewise,
        jump_l4: norms.l4,
        jump_linf: norms.linf,
        invalid_markers: norms.skipped,
        c0,
        viscosity,
    })
}
