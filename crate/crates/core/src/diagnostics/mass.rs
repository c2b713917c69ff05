//! Lagrangian mass: `rho(t, x(t)) J(t) = rho0(y)` along every particle,
//! with `rho = f^{-1}(fval)` from the f-ODE and `J` from its own ODE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::Result;
use crate::state::ParticleCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassResidual {
    /// `max |rho J - rho0| / rho0`.
    pub max: f64,
    /// Mean of the same quantity.
    pub mean: f64,
    /// Particle attaining the maximum.
    pub worst: usize,
}

pub fn lagrangian_mass(laws: &ConstitutiveLaws, particles: &ParticleCloud) -> Result<MassResidual> {
    let res: Vec<f64> = (0..particles.len())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let rho = laws.f_inverse_from(particles.fval[k], Some(particles.rho[k]))?;
            let r0 = particles.rho0[k];
            Ok((rho * particles.jac[k] - r0).abs() / r0)
        })
        .collect::<Result<_>>()?;
    let (mut max, mut worst) = (0.0, 0);
    for (k, &r) in res.iter().enumerate() {
        if r > max {
            max = r;
            worst = k;
        }
    }
    let mean = if res.is_empty() { 0.0 } else { res.iter().sum::<f64>() / res.len() as f64 };
    Ok(MassResidual { max, mean, worst })
}
