//! The second Hoff identity
//!
//! ```text
//! d/dt 1/2 int rho |u'|^2 + int 2 mu |Du'|^2 + lambda (div u')^2
//!   = int mu du'^j/dx_k du^l/dx_j du^k/dx_l                       (T1)
//!   + int mu du'^j/dx_k du^l/dx_k du^j/dx_l                       (T2)
//!   + int 2 rho mu' du'^j/dx_k D^jk u div u                       (T3)
//!   + int div u' [lambda tr(grad u grad u) + rho lambda' (div u)^2 - rho P' div u]   (T4)
//!   - int du'^j/dx_k Pi^jk div u                                  (T5)
//!   + int du'^j/dx_l du^l/dx_k Pi^jk                              (T6)
//!   + int u' . (b_t + div(b (x) u))                               (body force b, if any)
//! ```
//!
//! evaluated by grid quadrature at the middle of three consecutive frames,
//! the time derivative by the three-point difference.

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::spectral::Spectral;
use crate::state::{time_derivative, Snapshot};

use super::{contract, matmul, stress, Kinematics};

/// Density and acceleration at one time.
#[derive(Debug, Clone, Copy)]
pub struct Hoff2Frame<'a> {
    pub t: f64,
    pub rho: &'a ScalarGrid,
    pub udot: &'a VectorGrid,
    /// Body force at `t`, for forced runs.
    pub force: Option<&'a VectorGrid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hoff2Terms {
    pub t: f64,
    /// `d/dt 1/2 int rho |u'|^2`.
    pub kinetic_rate: f64,
    pub dissipation: f64,
    pub terms: [f64; 6],
    pub force: f64,
    /// `|LHS - RHS| / max |term|`, zero when every term vanishes.
    pub residual: f64,
}

fn half_rho_sq(f: &Hoff2Frame) -> f64 {
    let s = f.udot.c[0].mul(&f.udot.c[0]).add(&f.udot.c[1].mul(&f.udot.c[1]));
    0.5 * f.rho.dot(&s)
}

/// Three-point derivative weights at `t1` for samples at `t0 < t1 < t2`.
fn weights(t0: f64, t1: f64, t2: f64) -> [f64; 3] {
    let (h1, h2) = (t1 - t0, t2 - t1);
    [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
}

/// Identity at `curr`, whose velocity is `u`.
pub fn hoff2_identity(
    sp: &Spectral,
    laws: &ConstitutiveLaws,
    prev: Hoff2Frame,
    curr: Hoff2Frame,
    next: Hoff2Frame,
    u: &VectorGrid,
) -> Result<Hoff2Terms> {
    if !(prev.t < curr.t && curr.t < next.t) {
        return Err(Error::InvalidInput("hoff2 frames out of order".into()));
    }
    let w = weights(prev.t, curr.t, next.t);
    let kinetic_rate = w[0] * half_rho_sq(&prev) + w[1] * half_rho_sq(&curr) + w[2] * half_rho_sq(&next);

    let rho = curr.rho;
    let kin = Kinematics::new(sp, u)?;
    let dot = Kinematics::new(sp, curr.udot)?;
    let pi = stress(laws, rho, &kin);
    let mu = rho.map(|r| laws.mu(r));
    let gg = matmul(&kin.grad, &kin.grad);

    let dissipation = rho
        .map(|r| 2.0 * laws.mu(r))
        .dot(&contract(&dot.strain, &dot.strain))
        + rho.map(|r| laws.lambda(r)).dot(&dot.div.mul(&dot.div));
    let t1 = mu.dot(&contract(&dot.grad, &gg.transpose()));
    let t2 = mu.dot(&contract(&dot.grad, &gg));
    let t3 = rho
        .map(|r| 2.0 * r * laws.dmu(r))
        .mul(&kin.div)
        .dot(&contract(&dot.grad, &kin.strain));
    let bracket = ScalarGrid::from_values(
        rho.n(),
        rho.l(),
        rho.values()
            .iter()
            .zip(gg.trace().values())
            .zip(kin.div.values())
            .map(|((&r, &tr), &d)| laws.lambda(r) * tr + r * laws.dlambda(r) * d * d - r * laws.dp(r) * d)
            .collect(),
    )?;
    let t4 = dot.div.dot(&bracket);
    let t5 = -kin.div.dot(&contract(&dot.grad, &pi));
    let t6 = contract(&matmul(&dot.grad, &kin.grad), &pi).integral();

    let force = match (prev.force, curr.force, next.force) {
        (Some(a), Some(b), Some(c)) => {
            let (bt, _) = time_derivative(
                Some(Snapshot { t: prev.t, field: a }),
                Snapshot { t: curr.t, field: b },
                Some(Snapshot { t: next.t, field: c }),
            )?;
            let mut flux = VectorGrid::zeros(u.n(), u.l());
            for j in 0..2 {
                let bu = VectorGrid { c: [b.c[j].mul(&u.c[0]), b.c[j].mul(&u.c[1])] };
                flux.c[j] = sp.divergence(&bu)?;
            }
            curr.udot.dot(&bt.add(&flux))
        }
        (None, None, None) => 0.0,
        _ => return Err(Error::InvalidInput("body force missing on some hoff2 frames".into())),
    };

    let terms = [t1, t2, t3, t4, t5, t6];
    let lhs = kinetic_rate + dissipation;
    let rhs: f64 = terms.iter().sum::<f64>() + force;
    let scale = terms
        .iter()
        .chain([kinetic_rate, dissipation, force].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Hoff2Terms {
        t: curr.t,
        kinetic_rate,
        dissipation,
        terms,
        force,
        residual: super::relative((lhs - rhs).abs(), scale),
    })
}
