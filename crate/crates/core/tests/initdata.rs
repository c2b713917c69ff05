use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use patchflow::constitutive::{default_band, ViscosityLaw, BulkLaw, PressureLaw};
use patchflow::diagnostics::probe::{InterfaceView, ProbeConfig};
use patchflow::initdata::*;
use patchflow::interface::Side;
use patchflow::{ConstitutiveLaws, LawPreset, ScalarGrid, Spectral, VectorGrid};
use proptest::prelude::*;

fn laws(preset: LawPreset, rho_ref: f64, lo: f64, hi: f64) -> Arc<ConstitutiveLaws> {
    Arc::new(ConstitutiveLaws::new(preset, rho_ref, default_band(lo, hi)).unwrap())
}

/// `mu = rho`, `lambda = 0`, `P = rho`.
fn mu_is_rho() -> LawPreset {
    LawPreset {
        pressure: PressureLaw::Gamma { a: 1.0, gamma: 1.0 },
        viscosity: ViscosityLaw::Affine { mu_ref: 1.0, eps: 1.0 },
        bulk: BulkLaw::Constant { lambda: 0.0 },
    }
}

fn circle(rho_in: f64) -> PatchSpec {
    PatchSpec::uniform(PatchShape::Circle { radius: 1.0 }, rho_in, 1.0, 0.5)
}

#[test]
fn trivial_spec_gives_constant_state() {
    let laws = laws(mu_is_rho(), 1.0, 1.0, 1.0);
    let data = build_initial_data(&circle(1.0), &InitialVelocitySpec::at_rest(0.1), &GridSpec::new(64, 8.0), &laws)
        .unwrap();
    let s = &data.state;
    assert_eq!(data.solve.iterations, 0);
    assert!(s.u.c.iter().all(|c| c.values().iter().all(|&v| v == 0.0)));
    assert!(s.recon.rho.values().iter().all(|&r| r == 1.0));
    let rep = smallness_report(s, &laws, &ProbeConfig { holder_budget: 5000, ..Default::default() }).unwrap();
    assert_eq!(rep.c0, 0.0, "{rep:?}");
    assert_eq!(rep.viscosity.composite, 0.0);
}

#[test]
fn circle_jump_at_markers_matches_configuration() {
    let laws = laws(mu_is_rho(), 1.0, 1.0, 1.1);
    let data =
        build_initial_data(&circle(1.1), &InitialVelocitySpec::at_rest(0.1), &GridSpec::new(128, 8.0), &laws).unwrap();
    let probe = ProbeConfig { holder_budget: 5000, ..Default::default() };
    let view = InterfaceView::new(&data.state, &probe);
    let jumps = view.jumps("rho", &data.state.recon.rho);
    assert!(jumps.iter().all(|s| s.valid));
    for s in &jumps {
        // The outward side is the + side.
        assert!((s.jump + 0.1).abs() < 1e-10, "{s:?}");
        assert!((laws.mu(s.plus) - laws.mu(s.minus) + 0.1).abs() < 1e-10);
    }
    let rep = smallness_report(&data.state, &laws, &probe).unwrap();
    assert!((rep.viscosity.jump_mu_inf - 0.1).abs() < 1e-10);
    assert!(rep.viscosity.composite.is_finite() && rep.viscosity.composite > 0.0);
}

#[test]
fn star_cusp_seminorm_matches_amplitude() {
    let laws = laws(LawPreset::proportional(1.0, 1.0), 1.0, 1.0, 1.5);
    let amp = 0.2;
    let patch = PatchSpec {
        shape: PatchShape::Star {
            radius: 0.85,
            harmonics: vec![Harmonic { k: 5, amplitude: 0.15, phase: 0.0 }],
        },
        center: None,
        inside: DensityProfile {
            base: 1.3,
            cusp: Some(Cusp { amplitude: amp, anchor_angle: 0.3, radius: 0.8 }),
        },
        outside: DensityProfile::constant(1.0),
        alpha: 0.5,
        rho_far: 1.0,
    };
    let data = build_initial_data(&patch, &InitialVelocitySpec::at_rest(0.1), &GridSpec::new(256, 4.0), &laws).unwrap();
    let probe = ProbeConfig { alpha: 0.5, holder_cutoff: 0.25, ..Default::default() };
    let view = InterfaceView::new(&data.state, &probe);
    let pw = view.piecewise_norm(&data.state.recon.rho, &|r| r - 1.0, 7);
    assert!(pw.seminorm.is_finite());
    let ratio = pw.seminorm / amp;
    assert!((0.8..=1.2).contains(&ratio), "seminorm {} vs amplitude {amp}", pw.seminorm);
}

#[test]
fn mollifier_symbol_matches_planar_quadrature() {
    let m = Mollifier { delta: 0.2 };
    assert!((m.symbol(0.0) - 1.0).abs() < 1e-12);
    // Independent oracle: midpoint rule over the disc of radius delta.
    let steps = 600;
    let dx = 2.0 * m.delta / steps as f64;
    for &k in &[3.0, 11.0, 27.0] {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..steps {
            for j in 0..steps {
                let x = -m.delta + (i as f64 + 0.5) * dx;
                let y = -m.delta + (j as f64 + 0.5) * dx;
                let w = Mollifier::profile((x * x + y * y).sqrt() / m.delta);
                num += w * (k * x).cos();
                den += w;
            }
        }
        let oracle = num / den;
        assert!((m.symbol(k) - oracle).abs() < 1e-4, "k={k}: {} vs {oracle}", m.symbol(k));
    }
}

fn vortex_target() -> InitialVelocitySpec {
    InitialVelocitySpec {
        stream: vec![GaussianTerm { amplitude: 0.05, center: None, width: 0.5 }],
        potential: vec![GaussianTerm { amplitude: 0.02, center: Some([3.5, 4.5]), width: 0.4 }],
        delta: 0.1,
    }
}

/// Recomputes `-div(2 mu Du + (lambda div u - P + P~) I) + c u + div(w * Pi0)`
/// through the generic spectral operators.
fn momentum_residual(laws: &ConstitutiveLaws, rho: &ScalarGrid, target: &VectorGrid, solve: &VelocitySolve) -> f64 {
    let sp = Spectral::new(rho.n(), rho.l()).unwrap();
    let u = solve.velocity();
    let stress_of = |v: &VectorGrid| {
        let d = sp.strain(v).unwrap();
        let div = sp.divergence(v).unwrap();
        let iso = rho.zip_map(&div, |r, dv| laws.lambda(r) * dv - (laws.p(r) - laws.p_ref()));
        let mut m = d.mul_scalar_field(&rho.map(|r| 2.0 * laws.mu(r)));
        m.c[0][0] = m.c[0][0].add(&iso);
        m.c[1][1] = m.c[1][1].add(&iso);
        m
    };
    let mut pi0 = stress_of(target);
    let w = Mollifier { delta: solve.delta }.multiplier(&sp);
    for row in pi0.c.iter_mut() {
        for c in row.iter_mut() {
            let mut hat = sp.forward(c).unwrap();
            hat.iter_mut().zip(&w).for_each(|(h, m)| *h *= m);
            *c = sp.inverse(hat);
        }
    }
    let lhs = sp.matrix_divergence(&stress_of(u)).unwrap().scale(-1.0);
    let mut r = lhs.add(&sp.matrix_divergence(&pi0).unwrap());
    r.axpy(solve.c_delta, u);
    // The Nyquist lines are outside the solved space.
    let n = rho.n();
    for c in r.c.iter_mut() {
        let mut hat = sp.forward(c).unwrap();
        for k in 0..n {
            hat[n / 2 * n + k] = 0.0.into();
            hat[k * n + n / 2] = 0.0.into();
        }
        *c = sp.inverse(hat);
    }
    r.l2_norm() / solve.rhs_norm
}

#[test]
fn zero_data_gives_zero_velocity() {
    let laws = laws(LawPreset::constant_viscosity(1.0, 1.4, 0.1, 0.0), 1.0, 1.0, 1.0);
    let rho = ScalarGrid::constant(32, 8.0, 1.0);
    let s = solve_initial_velocity(&laws, &rho, &VectorGrid::zeros(32, 8.0), 0.2).unwrap();
    assert_eq!(s.c_delta, 0.0);
    assert!(s.velocity().max_norm() == 0.0);
}

#[test]
fn mollified_velocity_converges_as_delta_shrinks() {
    let laws = laws(LawPreset::constant_viscosity(1.0, 1.4, 0.1, 0.05), 1.0, 1.0, 1.0);
    let (n, l) = (128, 8.0);
    let sp = Spectral::new(n, l).unwrap();
    let rho = ScalarGrid::constant(n, l, 1.0);
    let target = vortex_target().target(n, l);
    let mut errs = Vec::new();
    let mut cs = Vec::new();
    let mut ratios = Vec::new();
    for delta in [0.2, 0.1, 0.05] {
        let s = solve_initial_velocity(&laws, &rho, &target, delta).unwrap();
        assert!(s.relative_residual < 1e-8);
        assert!(momentum_residual(&laws, &rho, &target, &s) < 1e-7);
        let d = s.velocity().sub(&target);
        errs.push((sp.h1_norm_sq(&d.c[0]).unwrap() + sp.h1_norm_sq(&d.c[1]).unwrap()).sqrt());
        cs.push(s.c_delta);
        ratios.push(s.bound_ratio);
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(cs[0] >= cs[1] && cs[1] >= cs[2], "{cs:?}");
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi < 2.0 * lo, "{ratios:?}");
}

#[test]
fn patch_solve_meets_residual_oracle() {
    let laws = laws(mu_is_rho(), 1.0, 1.0, 1.2);
    let vel = vortex_target();
    let data = build_initial_data(&circle(1.2), &vel, &GridSpec::new(128, 8.0), &laws).unwrap();
    let target = vel.target(128, 8.0);
    assert!(data.solve.relative_residual < 1e-8);
    let r = momentum_residual(&laws, &data.state.recon.rho, &target, &data.solve);
    assert!(r < 1e-7, "residual {r:e}");
    assert!(data.solve.c_delta > 0.0);
}

#[test]
fn smallness_summands_match_quadrature() {
    let laws = laws(LawPreset::constant_viscosity(1.0, 2.0, 0.1, 0.05), 1.0, 1.0, 1.1);
    let (n, l) = (256, 8.0);
    let data = build_initial_data(&circle(1.1), &InitialVelocitySpec::at_rest(0.1), &GridSpec::new(n, l), &laws).unwrap();
    let probe = ProbeConfig { holder_budget: 20_000, ..Default::default() };
    let rep = smallness_report(&data.state, &laws, &probe).unwrap();

    // H1 of the velocity through Parseval.
    let sp = Spectral::new(n, l).unwrap();
    let mut h1 = 0.0;
    for c in &data.state.u.c {
        let hat = sp.forward(c).unwrap();
        for i in 0..n {
            for j in 0..n {
                let k2 = sp.k_even()[i].powi(2) + sp.k_even()[j].powi(2);
                h1 += (1.0 + k2) * hat[i * n + j].norm_sqr();
            }
        }
    }
    h1 *= l * l / (n as f64).powi(4);
    assert!(h1 > 0.0);
    assert!((rep.u_h1_sq / h1 - 1.0).abs() < 0.01, "{} vs {h1}", rep.u_h1_sq);

    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    assert!(rel(rep.rho_l2, 0.1 * PI.sqrt()) < 0.01, "{}", rep.rho_l2);
    assert!(rel(rep.rho_piecewise.sup, 0.1) < 0.01);
    assert!(rep.rho_piecewise.seminorm < 1e-3);
    assert!(rel(rep.jump_linf, 0.1) < 0.01);
    assert!(rel(rep.jump_l4, 0.1 * TAU.powf(0.25)) < 0.01, "{}", rep.jump_l4);
    let c0 = h1 + (0.1 * PI.sqrt() + 0.1).powi(2) + (0.1 * TAU.powf(0.25) + 0.1).powi(2);
    assert!(rel(rep.c0, c0) < 0.01, "{} vs {c0}", rep.c0);
}

#[test]
fn invalid_specs_name_the_field() {
    let laws = laws(mu_is_rho(), 1.0, 1.0, 1.1);
    let vel = InitialVelocitySpec::at_rest(0.1);
    let err = |p: &PatchSpec, v: &InitialVelocitySpec, g: &GridSpec| {
        build_initial_data(p, v, g, &laws).unwrap_err().to_string()
    };
    assert!(err(&circle(1.1), &vel, &GridSpec::new(100, 8.0)).contains("grid.n"));
    let mut p = circle(1.1);
    p.alpha = 1.5;
    assert!(err(&p, &vel, &GridSpec::new(64, 8.0)).contains("patch.alpha"));
    let big = PatchSpec::uniform(PatchShape::Circle { radius: 3.0 }, 1.1, 1.0, 0.5);
    assert!(err(&big, &vel, &GridSpec::new(64, 8.0)).contains("patch.shape"));
    assert!(err(&circle(1.1), &InitialVelocitySpec::at_rest(1.5), &GridSpec::new(64, 8.0)).contains("velocity.delta"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn levelset_sign_agrees_with_shape(
        amp in 0.0f64..0.3, k in 2u32..7, phase in 0.0f64..TAU,
        x in 0.0f64..8.0, y in 0.0f64..8.0,
    ) {
        let patch = PatchSpec::uniform(
            PatchShape::Star { radius: 1.2, harmonics: vec![Harmonic { k, amplitude: amp, phase }] },
            1.2, 1.0, 0.5,
        );
        let s = patch.shape_coordinate([x, y], 8.0);
        prop_assume!((s - 1.0).abs() > 1e-9);
        let phi = patch.levelset_value([x, y], 8.0);
        let side = patch.side([x, y], 8.0);
        prop_assert_eq!(phi > 0.0, side == Side::Inside);
        let r = patch.rho0([x, y], 8.0);
        prop_assert!(r == 1.2 || r == 1.0);
    }

    #[test]
    fn tapered_outside_profile_stays_between_values(x in 0.0f64..8.0, y in 0.0f64..8.0) {
        let mut patch = circle(1.2);
        patch.outside = DensityProfile::constant(1.1);
        let r = patch.rho0([x, y], 8.0);
        prop_assert!((1.0..=1.2).contains(&r));
        if !patch.is_inside([x, y], 8.0) {
            let d = ((x - 4.0).powi(2) + (y - 4.0).powi(2)).sqrt() - 1.0;
            if d >= 2.0 {
                prop_assert_eq!(r, 1.0);
            }
        }
    }
}
