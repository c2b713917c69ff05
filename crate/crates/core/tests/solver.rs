use std::f64::consts::PI;
use std::sync::Arc;

use patchflow::constitutive::{BulkLaw, ConstitutiveLaws, LawPreset, PressureLaw, ViscosityLaw};
use patchflow::grid::{ScalarGrid, VectorGrid};
use patchflow::interface::{InterfaceCurve, LevelSet, Side};
use patchflow::solver::{f_value_step, DtControl, Solver, StepConfig};
use patchflow::state::{density_on_grid, FluidState, LinearInTime, ParticleCloud, StepHistory};

fn circle_state(
    n: usize,
    l: f64,
    laws: &ConstitutiveLaws,
    rho_in: f64,
    rho_out: f64,
    u: impl Fn(f64, f64) -> [f64; 2],
) -> FluidState {
    let (c, r) = ([l / 2.0, l / 2.0], l / 4.0);
    let side = move |p: [f64; 2]| {
        if ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() < r {
            Side::Inside
        } else {
            Side::Outside
        }
    };
    let particles = ParticleCloud::seed(
        n,
        l,
        2,
        laws,
        |p| {
            if side(p) == Side::Inside {
                rho_in
            } else {
                rho_out
            }
        },
        side,
    )
    .unwrap();
    let levelset = LevelSet::new(ScalarGrid::from_fn(n, l, |x, y| {
        r - ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt()
    }));
    let curve = InterfaceCurve::from_parametric(4 * n, |t| {
        let a = 2.0 * PI * t;
        [c[0] + r * a.cos(), c[1] + r * a.sin()]
    })
    .unwrap();
    let recon = density_on_grid(&particles, &levelset, laws).unwrap();
    FluidState {
        t: 0.0,
        u: VectorGrid::from_fn(n, l, u),
        particles,
        curve,
        levelset,
        recon,
        history: StepHistory::default(),
    }
}

fn log_laws(mu: f64) -> ConstitutiveLaws {
    ConstitutiveLaws::new(
        LawPreset::constant_viscosity(1.0, 1.0, mu, 0.0),
        1.0,
        [0.25, 4.0],
    )
    .unwrap()
}

#[test]
fn constant_state_is_a_fixed_point() {
    let laws = Arc::new(log_laws(1.0));
    let mut s = circle_state(32, 1.0, &laws, 1.0, 1.0, |_, _| [0.0, 0.0]);
    let s0 = s.clone();
    let solver = Solver::new(32, 1.0, laws.clone(), StepConfig::default()).unwrap();
    for _ in 0..20 {
        solver.full_step(&mut s).unwrap();
    }
    assert_eq!(s.u, s0.u);
    assert_eq!(s.recon, s0.recon);
    assert_eq!(s.particles, s0.particles);
    assert_eq!(s.curve, s0.curve);
    assert_eq!(s.levelset, s0.levelset);
}

#[test]
fn shear_mode_decays_at_heat_rate() {
    let mu = 0.1;
    let laws = Arc::new(log_laws(mu));
    let (n, l) = (32, 1.0);
    let k = 2.0 * PI / l;
    let amp = 0.05;
    let mut errs = Vec::new();
    for &dt in &[0.02, 0.01, 0.005] {
        let mut s = circle_state(n, l, &laws, 1.0, 1.0, |_, y| [amp * (k * y).sin(), 0.0]);
        let cfg = StepConfig {
            dt: DtControl::Fixed { dt },
            ..StepConfig::default()
        };
        let solver = Solver::new(n, l, laws.clone(), cfg).unwrap();
        let steps = (0.5 / dt).round() as usize;
        for _ in 0..steps {
            solver.full_step(&mut s).unwrap();
        }
        let decay = (-mu * k * k * s.t).exp();
        let exact = VectorGrid::from_fn(n, l, |_, y| [amp * decay * (k * y).sin(), 0.0]);
        errs.push(s.u.sub(&exact).max_norm() / amp);
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    assert!(o1 > 1.8 && o2 > 1.8, "{errs:?}");
}

#[test]
fn f_ode_examples() {
    // F = 0 and P = P~: nothing moves.
    let laws = log_laws(1.0);
    let mut p = ParticleCloud::seed(8, 1.0, 1, &laws, |_| 1.0, |_| Side::Inside).unwrap();
    let start = p.pos.clone();
    f_value_step(&mut p, &start, None, &laws, 0.1).unwrap();
    assert!(p.fval.iter().all(|&f| f == 0.0));

    // Proportional laws, F = 0: f = P - P~ decays like exp(-t).
    let laws = ConstitutiveLaws::new(LawPreset::proportional(1.0, 1.0), 1.0, [0.25, 4.0]).unwrap();
    let mut errs = Vec::new();
    for &dt in &[0.1, 0.05] {
        let mut p =
            ParticleCloud::seed(4, 1.0, 1, &laws, |x| 1.0 + 0.5 * x[0], |_| Side::Inside).unwrap();
        let f0 = p.fval.clone();
        let start = p.pos.clone();
        let zero = LinearInTime::frozen(vec![ScalarGrid::zeros(4, 1.0)]);
        for _ in 0..(1.0 / dt) as usize {
            f_value_step(&mut p, &start, Some(&zero), &laws, dt).unwrap();
        }
        let e = p
            .fval
            .iter()
            .zip(&f0)
            .map(|(f, g)| (f - g * (-1f64).exp()).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[0] / errs[1] > 3.8, "{errs:?}");

    // Two particles across a density jump, constant viscosity: the gap
    // decays at a rate between nu_low and nu_high.
    let laws = log_laws(1.0);
    let nu = ConstitutiveLaws::new(
        LawPreset::constant_viscosity(1.0, 1.0, 1.0, 0.0),
        1.0,
        [0.5, 2.0],
    )
    .unwrap()
    .nu_bounds(400)
    .unwrap();
    let mut p = ParticleCloud::seed(
        2,
        1.0,
        1,
        &laws,
        |x| if x[0] < 0.5 { 1.8 } else { 0.6 },
        |_| Side::Inside,
    )
    .unwrap();
    let start = p.pos.clone();
    let gap = |p: &ParticleCloud| p.fval[0] - p.fval[2];
    let g0 = gap(&p);
    let dt = 1e-3;
    let mut prev = g0;
    for _ in 0..200 {
        f_value_step(&mut p, &start, None, &laws, dt).unwrap();
        let g = gap(&p);
        let rate = -(g / prev).ln() / dt;
        assert!(
            rate >= nu.low * (1.0 - 1e-3) && rate <= nu.high * (1.0 + 1e-3),
            "rate {rate} vs {nu:?}"
        );
        prev = g;
    }
}

#[test]
fn cfl_examples() {
    let laws = Arc::new(log_laws(1.0));
    let (n, l) = (256, 1.0);
    let s = circle_state(n, l, &laws, 1.0, 1.0, |_, _| [0.0, 0.0]);
    let cfg = StepConfig {
        dt: DtControl::Cfl { dt_max: 0.01 },
        ..StepConfig::default()
    };
    let solver = Solver::new(n, l, laws.clone(), cfg.clone()).unwrap();
    assert_eq!(solver.cfl_dt(&s), 0.01);

    let s = circle_state(n, l, &laws, 1.0, 1.0, |_, y| [(2.0 * PI * y).sin(), 0.0]);
    let umax = s.u.max_norm();
    let solver = Solver::new(
        n,
        l,
        laws.clone(),
        StepConfig {
            dt: DtControl::Cfl { dt_max: 1.0 },
            ..cfg.clone()
        },
    )
    .unwrap();
    assert!((solver.cfl_dt(&s) - 0.4 * (l / n as f64) / umax).abs() < 1e-15);

    // mu = mu~ + eps (rho - rho~): doubling eps halves the remainder bound.
    let bound = |eps: f64| {
        let preset = LawPreset {
            pressure: PressureLaw::Gamma {
                a: 1e-3,
                gamma: 1.0,
            },
            viscosity: ViscosityLaw::Affine { mu_ref: 1.0, eps },
            bulk: BulkLaw::Constant { lambda: 0.0 },
        };
        let laws = Arc::new(ConstitutiveLaws::new(preset, 1.0, [0.5, 2.0]).unwrap());
        let s = circle_state(64, 1.0, &laws, 1.5, 1.0, |_, _| [0.0, 0.0]);
        let solver = Solver::new(
            64,
            1.0,
            laws.clone(),
            StepConfig {
                dt: DtControl::Cfl { dt_max: 1.0 },
                ..cfg.clone()
            },
        )
        .unwrap();
        solver.cfl_dt(&s)
    };
    let (a, b) = (bound(0.2), bound(0.4));
    assert!((a / b - 2.0).abs() < 1e-12, "{a} {b}");
}

#[test]
fn invalid_config_rejected() {
    let bad = StepConfig {
        cfl: 0.95,
        ..StepConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = StepConfig {
        dt: DtControl::Fixed { dt: 0.0 },
        ..StepConfig::default()
    };
    assert!(bad.validate().is_err());
}

/// Constant density, solenoidal velocity `A(t) (sin k y, sin k x)` and the
/// body force that makes it an exact solution.
fn manufactured(
    mu: f64,
    l: f64,
) -> (
    impl Fn(f64, f64, f64) -> [f64; 2],
    impl Fn(f64, [f64; 2]) -> [f64; 2],
) {
    let k = 2.0 * PI / l;
    let a = |t: f64| 0.3 + 0.2 * (3.0 * t).sin();
    let da = |t: f64| 0.6 * (3.0 * t).cos();
    let u = move |t: f64, x: f64, y: f64| [a(t) * (k * y).sin(), a(t) * (k * x).sin()];
    let f = move |t: f64, p: [f64; 2]| {
        let (x, y) = (p[0], p[1]);
        let at = a(t);
        let adv = [
            at * at * k * (k * x).sin() * (k * y).cos(),
            at * at * k * (k * y).sin() * (k * x).cos(),
        ];
        [
            da(t) * (k * y).sin() + adv[0] + mu * k * k * at * (k * y).sin(),
            da(t) * (k * x).sin() + adv[1] + mu * k * k * at * (k * x).sin(),
        ]
    };
    (u, f)
}

#[test]
fn manufactured_solution_second_order_in_time() {
    let mu = 0.05;
    let laws = Arc::new(log_laws(mu));
    let (n, l) = (32, 1.0);
    let mut errs = Vec::new();
    for &dt in &[0.02, 0.01, 0.005] {
        let (u, f) = manufactured(mu, l);
        let mut s = circle_state(n, l, &laws, 1.0, 1.0, |x, y| u(0.0, x, y));
        let cfg = StepConfig {
            dt: DtControl::Fixed { dt },
            ..StepConfig::default()
        };
        let solver = Solver::new(n, l, laws.clone(), cfg)
            .unwrap()
            .with_force(Arc::new(f));
        for _ in 0..(0.5 / dt).round() as usize {
            solver.full_step(&mut s).unwrap();
        }
        let exact = VectorGrid::from_fn(n, l, |x, y| u(s.t, x, y));
        errs.push(s.u.sub(&exact).l2_norm() / exact.l2_norm());
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    assert!(o1 > 1.9 && o2 > 1.9, "{errs:?}");
}

#[test]
fn momentum_conserved_for_smooth_constant_density_flow() {
    let laws = Arc::new(log_laws(0.05));
    let (n, l) = (64, 1.0);
    let mut s = circle_state(n, l, &laws, 1.0, 1.0, |x, y| {
        // Compactly concentrated solenoidal field from a Gaussian stream function.
        let (dx, dy) = (x - 0.5, y - 0.5);
        let g = (-(dx * dx + dy * dy) / 0.01).exp();
        [-0.1 * (-2.0 * dy / 0.01) * g, 0.1 * (-2.0 * dx / 0.01) * g]
    });
    let m0 = s.momentum();
    let solver = Solver::new(n, l, laws.clone(), StepConfig::default()).unwrap();
    while s.t < 0.5 {
        solver.full_step(&mut s).unwrap();
    }
    let m1 = s.momentum();
    let drift = ((m1[0] - m0[0]).powi(2) + (m1[1] - m0[1]).powi(2)).sqrt() / s.t;
    assert!(drift < 1e-6, "momentum drift {drift}");
}

#[test]
fn frozen_mode_only_relaxes_density() {
    let laws = Arc::new(
        ConstitutiveLaws::new(LawPreset::proportional(1.0, 1.0), 1.0, [0.5, 2.0]).unwrap(),
    );
    let mut s = circle_state(32, 1.0, &laws, 1.1, 1.0, |_, _| [0.0, 0.0]);
    let cfg = StepConfig {
        dt: DtControl::Fixed { dt: 0.01 },
        frozen_velocity: true,
        ..StepConfig::default()
    };
    let solver = Solver::new(32, 1.0, laws.clone(), cfg).unwrap();
    let p0 = s.particles.clone();
    for _ in 0..100 {
        solver.full_step(&mut s).unwrap();
    }
    assert_eq!(s.particles.pos, p0.pos);
    assert_eq!(s.u.max_norm(), 0.0);
    for (f, g) in s.particles.fval.iter().zip(&p0.fval) {
        // Midpoint rule: relative error about dt^2 / 6 at t = 1.
        assert!((f - g * (-s.t).exp()).abs() < 5e-5 * g.abs().max(1e-12));
    }
}
