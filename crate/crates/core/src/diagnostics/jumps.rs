//! Interface jump identities at the markers.
//!
//! With `[g] = g_out - g_in`, `<g>` the two-sided average, `n` the outward
//! normal and `tau = (-n_2, n_1)`:
//!
//! ```text
//! r1 = |[Pi] n|
//! r2 = |[grad u] tau|                          (rank-one defect)
//! r3 = |[F] - 2 [mu] (<div u> - <D^jk u> n^j n^k)|
//! r4 = |[mu rot u] - [mu] (<rot u> - 2 <D^jk u> n^k tau^j)|
//! ```
//!
//! each divided by the larger one-sided magnitude of the quantity whose
//! jump is taken (and of the right-hand side for r3, r4; r4 also by
//! `mu |grad u|`). The `+` side is the outside.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::constitutive::ConstitutiveLaws;
use crate::grid::{ScalarGrid, VectorGrid};
use crate::interface::{one_sided_gradient, Side};

use super::probe::{CurveNorms, InterfaceView};
use super::relative;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerResiduals {
    pub marker: usize,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
    pub jump_f: f64,
    pub jump_rho: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    /// Raw `[F]` and its extrapolation error.
    pub jump_flux: f64,
    pub jump_flux_error: f64,
    /// Raw `[mu rot u]` and its extrapolation error.
    pub jump_mu_rot: f64,
    pub jump_mu_rot_error: f64,
    /// Frobenius norm of `[grad u]`.
    pub jump_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpIdentityReport {
    pub markers: Vec<MarkerResiduals>,
    pub invalid: usize,
    pub median_r1: f64,
    pub median_r2: f64,
    pub median_r3: f64,
    pub median_r4: f64,
    pub jump_f: CurveNorms,
    pub jump_grad: CurveNorms,
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One-sided limits at a marker: velocity gradient (entry `(j, k)` is
/// `d_k u^j`), its fit error, and the density.
#[derive(Debug, Clone, Copy)]
struct SideLimit {
    grad: [[f64; 2]; 2],
    error: f64,
    rho: f64,
}

/// Quantities built from one side's limits.
struct SideValues {
    pi_n: [f64; 2],
    flux: f64,
    mu_rot: f64,
    div: f64,
    rot: f64,
    strain: [[f64; 2]; 2],
    frob: f64,
}

fn side_values(laws: &ConstitutiveLaws, s: &SideLimit, n: [f64; 2]) -> SideValues {
    let g = s.grad;
    let (mu, lam) = (laws.mu(s.rho), laws.lambda(s.rho));
    let dp = laws.p(s.rho) - laws.p_ref();
    let div = g[0][0] + g[1][1];
    let rot = g[1][0] - g[0][1];
    let off = 0.5 * (g[0][1] + g[1][0]);
    let strain = [[g[0][0], off], [off, g[1][1]]];
    let iso = lam * div - dp;
    let pi_n = [
        2.0 * mu * (strain[0][0] * n[0] + strain[0][1] * n[1]) + iso * n[0],
        2.0 * mu * (strain[1][0] * n[0] + strain[1][1] * n[1]) + iso * n[1],
    ];
    let frob = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    SideValues { pi_n, flux: (2.0 * mu + lam) * div - dp, mu_rot: mu * rot, div, rot, strain, frob }
}

/// Per-marker residuals from the velocity `u`.
///
/// The one-sided velocity gradients come from polynomial fits of `u`
/// through same-side nodes, evaluated at the marker. Spectral derivatives
/// of a field with a kink ring over several cells, which would leave an
/// O(1) residual at every resolution. Densities use the probed limits.
pub fn jump_identities(view: &InterfaceView, laws: &ConstitutiveLaws, u: &VectorGrid) -> JumpIdentityReport {
    let rho = view.state.rho();
    let j_f = view.jumps("f", &view.state.recon.fval);
    let j_rho = view.jumps("rho", rho);
    let normals = view.state.curve.normals();
    let points = view.state.curve.points();
    let uniform = |g: &ScalarGrid| {
        let v0 = g.values()[0];
        g.values().iter().all(|&v| v == v0)
    };
    let flat = [uniform(&u.c[0]), uniform(&u.c[1])];
    let fit_cells = view.probe.fit_cells(u.c[0].n());
    let limit = |x: [f64; 2], side: Side, rho: f64| -> Option<SideLimit> {
        let mut grad = [[0.0; 2]; 2];
        let mut error = 0.0;
        for j in 0..2 {
            if flat[j] {
                continue;
            }
            let fit = one_sided_gradient(&u.c[j], &view.sides, x, side, fit_cells)?;
            grad[j] = fit.grad;
            error += fit.error;
        }
        Some(SideLimit { grad, error, rho })
    };

    let markers: Vec<MarkerResiduals> = (0..normals.len())
        .into_par_iter()
        .map(|i| {
            let n = normals[i];
            let tau = [-n[1], n[0]];
            let jr = &j_rho[i];
            let mut row = MarkerResiduals {
                marker: i,
                x: points[i][0],
                y: points[i][1],
                valid: false,
                jump_f: j_f[i].jump,
                jump_rho: jr.jump,
                r1: f64::NAN,
                r2: f64::NAN,
                r3: f64::NAN,
                r4: f64::NAN,
                jump_flux: f64::NAN,
                jump_flux_error: f64::NAN,
                jump_mu_rot: f64::NAN,
                jump_mu_rot_error: f64::NAN,
                jump_grad: f64::NAN,
            };
            if !jr.valid {
                return row;
            }
            let (Some(lp), Some(lm)) = (limit(points[i], Side::Outside, jr.plus), limit(points[i], Side::Inside, jr.minus))
            else {
                return row;
            };
            row.valid = true;
            let (vp, vm) = (side_values(laws, &lp, n), side_values(laws, &lm, n));

            let pj = [vp.pi_n[0] - vm.pi_n[0], vp.pi_n[1] - vm.pi_n[1]];
            let pscale = vp.pi_n[0].hypot(vp.pi_n[1]).max(vm.pi_n[0].hypot(vm.pi_n[1]));
            row.r1 = relative(pj[0].hypot(pj[1]), pscale);

            let gj = |j: usize, k: usize| lp.grad[j][k] - lm.grad[j][k];
            let tang = [gj(0, 0) * tau[0] + gj(0, 1) * tau[1], gj(1, 0) * tau[0] + gj(1, 1) * tau[1]];
            row.jump_grad = (0..4).map(|e| gj(e / 2, e % 2).powi(2)).sum::<f64>().sqrt();
            row.r2 = relative(tang[0].hypot(tang[1]), vp.frob.max(vm.frob));

            let jmu = laws.mu(jr.plus) - laws.mu(jr.minus);
            let div_avg = 0.5 * (vp.div + vm.div);
            let rot_avg = 0.5 * (vp.rot + vm.rot);
            let da = |j: usize, k: usize| 0.5 * (vp.strain[j][k] + vm.strain[j][k]);
            let dnn: f64 = (0..4).map(|e| da(e / 2, e % 2) * n[e / 2] * n[e % 2]).sum();
            let dnt: f64 = (0..4).map(|e| da(e / 2, e % 2) * tau[e / 2] * n[e % 2]).sum();

            let jflux = vp.flux - vm.flux;
            let rhs3 = 2.0 * jmu * (div_avg - dnn);
            row.r3 = relative((jflux - rhs3).abs(), vp.flux.abs().max(vm.flux.abs()).max(rhs3.abs()));
            let jmr = vp.mu_rot - vm.mu_rot;
            let rhs4 = jmu * (rot_avg - 2.0 * dnt);
            // rot u may vanish at the interface; mu |grad u| keeps the scale.
            let mu_grad = (laws.mu(jr.plus) * vp.frob).max(laws.mu(jr.minus) * vm.frob);
            let scale4 = vp.mu_rot.abs().max(vm.mu_rot.abs()).max(rhs4.abs()).max(mu_grad);
            row.r4 = relative((jmr - rhs4).abs(), scale4);

            // Error propagation: gradient fit gaps plus the density limits.
            let rho_err = jr.error;
            let mut flux_err = 0.0;
            let mut rot_err = 0.0;
            for (lim, v) in [(&lp, &vp), (&lm, &vm)] {
                let visc = 2.0 * laws.mu(lim.rho) + laws.lambda(lim.rho);
                let dvisc = 2.0 * laws.dmu(lim.rho) + laws.dlambda(lim.rho);
                flux_err += visc * lim.error + (laws.dp(lim.rho) + (dvisc * v.div).abs()) * rho_err;
                rot_err += laws.mu(lim.rho) * lim.error + (laws.dmu(lim.rho) * v.rot).abs() * rho_err;
            }
            row.jump_flux = jflux;
            row.jump_flux_error = flux_err;
            row.jump_mu_rot = jmr;
            row.jump_mu_rot_error = rot_err;
            row
        })
        .collect();
    let ok: Vec<bool> = markers.iter().map(|m| m.valid).collect();
    let pick = |f: fn(&MarkerResiduals) -> f64| median(markers.iter().filter(|m| m.valid).map(f).collect());
    let grad_jumps: Vec<f64> = markers.iter().map(|m| m.jump_grad).collect();
    JumpIdentityReport {
        invalid: ok.iter().filter(|v| !**v).count(),
        median_r1: pick(|m| m.r1),
        median_r2: pick(|m| m.r2),
        median_r3: pick(|m| m.r3),
        median_r4: pick(|m| m.r4),
        jump_f: view.jump_norms(&j_f),
        jump_grad: view.curve_norms(&grad_jumps, &ok),
        markers,
    }
}
