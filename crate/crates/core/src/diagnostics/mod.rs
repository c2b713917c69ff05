//! Measured quantities: energies, the higher-order functionals, the
//! effective-flux and vorticity representations, interface jump identities,
//! jump decay fits, the Lagrangian mass check, the second Hoff identity and
//! the blow-up monitors. `recorder` ties them to a running simulation.

pub mod decay;
pub mod energy;
pub mod functionals;
pub mod hoff2;
pub mod identities;
pub mod jumps;
pub mod mass;
pub mod monitors;
pub mod probe;
pub mod recorder;

use crate::constitutive::ConstitutiveLaws;
use crate::error::Result;
use crate::grid::{MatrixGrid, ScalarGrid, VectorGrid};
use crate::spectral::{strain_from_gradient, Spectral};

/// Velocity gradient and the fields built from it.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Entry `(j, k)` is `d_k u^j`.
    pub grad: MatrixGrid,
    pub strain: MatrixGrid,
    pub div: ScalarGrid,
    pub rot: ScalarGrid,
}

impl Kinematics {
    pub fn new(sp: &Spectral, u: &VectorGrid) -> Result<Self> {
        let grad = sp.velocity_gradient(u)?;
        Ok(Self::from_gradient(grad))
    }

    pub fn from_gradient(grad: MatrixGrid) -> Self {
        let strain = strain_from_gradient(&grad);
        let div = grad.trace();
        let rot = grad.c[1][0].sub(&grad.c[0][1]);
        Self { grad, strain, div, rot }
    }

    /// `sum_jk (d_k u^j)^2` integrated, i.e. `||grad u||_{L^2}^2`.
    pub fn grad_l2_sq(&self) -> f64 {
        matrix_l2_sq(&self.grad)
    }

    /// Grid maximum of the Frobenius norm of `grad u`.
    pub fn grad_sup(&self) -> f64 {
        let g = &self.grad.c;
        (0..g[0][0].values().len())
            .map(|i| {
                let s: f64 = (0..4).map(|e| g[e / 2][e % 2].values()[i].powi(2)).sum();
                s.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn matrix_l2_sq(m: &MatrixGrid) -> f64 {
    (0..4).map(|e| m.c[e / 2][e % 2].l2_norm().powi(2)).sum()
}

/// Stress `Pi = 2 mu Du + (lambda div u - (P - P~)) I`.
pub fn stress(laws: &ConstitutiveLaws, rho: &ScalarGrid, kin: &Kinematics) -> MatrixGrid {
    let mu = rho.map(|r| laws.mu(r));
    let p_ref = laws.p_ref();
    let iso = rho.zip_map(&kin.div, |r, d| laws.lambda(r) * d - (laws.p(r) - p_ref));
    let s = &kin.strain.c;
    let off = mu.mul(&s[0][1]).scale(2.0);
    MatrixGrid {
        c: [
            [mu.mul(&s[0][0]).scale(2.0).add(&iso), off.clone()],
            [off, mu.mul(&s[1][1]).scale(2.0).add(&iso)],
        ],
    }
}

/// `sum_{j,k} a^{jk} b^{jk}`, pointwise.
pub(crate) fn contract(a: &MatrixGrid, b: &MatrixGrid) -> ScalarGrid {
    let mut out = a.c[0][0].mul(&b.c[0][0]);
    for e in 1..4 {
        out = out.add(&a.c[e / 2][e % 2].mul(&b.c[e / 2][e % 2]));
    }
    out
}

/// Pointwise matrix product `(a b)^{jk} = a^{jl} b^{lk}`.
pub(crate) fn matmul(a: &MatrixGrid, b: &MatrixGrid) -> MatrixGrid {
    let entry = |j: usize, k: usize| a.c[j][0].mul(&b.c[0][k]).add(&a.c[j][1].mul(&b.c[1][k]));
    MatrixGrid { c: [[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]] }
}

/// `|a - b| / |a|` with `0/0 = 0`.
pub(crate) fn relative(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}
