//! Effective flux and vorticity: direct pointwise values against their
//! singular-integral representations
//!
//! ```text
//! F        = (2 mu + lambda) div u - (P - P~) = -(-Lap)^-1 div(rho u') + [K, mu - mu~] Du
//! mu rot u =                                   -(-Lap)^-1 rot(rho u') + [K', mu - mu~] Du
//! ```
//!
//! On the torus the mean of `F` is not seen by `(-Lap)^-1`, so both sides
//! are compared after removing their means. Both sides also lose their
//! Nyquist rows and columns: the odd first-derivative symbols vanish there,
//! so the momentum balance says nothing about those modes, while pointwise
//! `P(rho)` of a discontinuous density carries a lot of energy on them.
//! When a body force `b` drives the run, `rho u' - b` replaces `rho u'`.

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::Result;
use crate::grid::{ScalarGrid, VectorGrid};
use crate::interface::SideClassifier;
use crate::spectral::{KernelKind, Spectral};
use crate::state::FluidState;
use crate::solver::effective_flux_direct;

use super::{relative, Kinematics};

/// Both sides of an identity and their relative `L^2` gap off the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub direct: ScalarGrid,
    pub repr: ScalarGrid,
    /// `|d - r|_{L^2(away)} / |d|_{L^2(away)}` on the mean-free parts, off
    /// the Nyquist lines.
    pub residual: f64,
    /// `mean(direct) - mean(repr)`.
    pub mean_offset: f64,
    /// Nodes kept after removing the band.
    pub kept: usize,
}

/// `true` for nodes at distance at least `width` from the interface.
pub fn band_mask(state: &FluidState, width: f64) -> Vec<bool> {
    let cls = SideClassifier::new(&state.levelset, 0.0);
    let n = state.n();
    let h = state.l() / n as f64;
    (0..n * n)
        .map(|k| {
            let x = [(k / n) as f64 * h, (k % n) as f64 * h];
            cls.distance(x).abs() >= width
        })
        .collect()
}

fn momentum_source(rho: &ScalarGrid, udot: &VectorGrid, force: Option<&VectorGrid>) -> VectorGrid {
    let m = udot.mul_scalar_field(rho);
    match force {
        Some(b) => m.sub(b),
        None => m,
    }
}

fn compare(sp: &Spectral, direct: ScalarGrid, repr: ScalarGrid, mask: &[bool]) -> Result<IdentityCheck> {
    let (md, mr) = (direct.mean(), repr.mean());
    let (ds, rs) = (sp.off_nyquist(&direct)?, sp.off_nyquist(&repr)?);
    let (mut num, mut den, mut kept) = (0.0, 0.0, 0usize);
    for ((&d, &r), &keep) in ds.values().iter().zip(rs.values()).zip(mask) {
        if keep {
            let a = d - md;
            num += (a - (r - mr)).powi(2);
            den += a * a;
            kept += 1;
        }
    }
    Ok(IdentityCheck { residual: relative(num.sqrt(), den.sqrt()), mean_offset: md - mr, direct, repr, kept })
}

/// Effective-flux identity. `mask` comes from [`band_mask`].
pub fn effective_flux(
    sp: &Spectral,
    laws: &ConstitutiveLaws,
    rho: &ScalarGrid,
    kin: &Kinematics,
    udot: &VectorGrid,
    force: Option<&VectorGrid>,
    mask: &[bool],
) -> Result<IdentityCheck> {
    let direct = effective_flux_direct(laws, rho, &kin.div);
    let src = momentum_source(rho, udot, force);
    let dmu = rho.map(|r| laws.mu(r) - laws.mu_ref());
    let repr = sp
        .inv_laplacian(&sp.divergence(&src)?)?
        .scale(-1.0)
        .add(&sp.commutator_k(&dmu, &kin.strain, KernelKind::K, false)?);
    compare(sp, direct, repr, mask)
}

/// Vorticity identity, `mu(rho) rot u` on the direct side.
pub fn vorticity_identity(
    sp: &Spectral,
    laws: &ConstitutiveLaws,
    rho: &ScalarGrid,
    kin: &Kinematics,
    udot: &VectorGrid,
    force: Option<&VectorGrid>,
    mask: &[bool],
) -> Result<IdentityCheck> {
    let direct = rho.map(|r| laws.mu(r)).mul(&kin.rot);
    let src = momentum_source(rho, udot, force);
    let dmu = rho.map(|r| laws.mu(r) - laws.mu_ref());
    let repr = sp
        .inv_laplacian(&sp.rot2(&src)?)?
        .scale(-1.0)
        .add(&sp.commutator_k(&dmu, &kin.strain, KernelKind::KPrime, false)?);
    compare(sp, direct, repr, mask)
}
