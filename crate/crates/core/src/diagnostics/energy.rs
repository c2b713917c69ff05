//! The classical energy `E = int rho |u|^2 / 2 + H_1(rho)` and its
//! dissipation rate, plus a running balance `E(t) + int D - E(0)`.

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveLaws;
use crate::error::Result;
use crate::grid::{ScalarGrid, VectorGrid};
use crate::spectral::Spectral;

use super::Kinematics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub kinetic: f64,
    pub potential: f64,
    pub energy: f64,
    /// `int 2 mu |Du|^2 + lambda (div u)^2`.
    pub dissipation_rate: f64,
}

pub fn classical_energy(sp: &Spectral, laws: &ConstitutiveLaws, rho: &ScalarGrid, u: &VectorGrid) -> Result<EnergySample> {
    let kin = Kinematics::new(sp, u)?;
    Ok(energy_from(laws, rho, u, &kin))
}

pub fn energy_from(laws: &ConstitutiveLaws, rho: &ScalarGrid, u: &VectorGrid, kin: &Kinematics) -> EnergySample {
    let speed2 = u.c[0].mul(&u.c[0]).add(&u.c[1].mul(&u.c[1]));
    let kinetic = 0.5 * rho.dot(&speed2);
    let potential = rho.map(|r| laws.potential_energy_raw(r, 1.0)).integral();
    let s = &kin.strain.c;
    let du2 = s[0][0].mul(&s[0][0]).add(&s[1][1].mul(&s[1][1])).add(&s[0][1].mul(&s[0][1]).scale(2.0));
    let rate = rho
        .values()
        .iter()
        .zip(du2.values())
        .zip(kin.div.values())
        .map(|((&r, &d2), &dv)| 2.0 * laws.mu(r) * d2 + laws.lambda(r) * dv * dv)
        .sum::<f64>()
        * rho.h()
        * rho.h();
    EnergySample { kinetic, potential, energy: kinetic + potential, dissipation_rate: rate }
}

/// Trapezoidal bookkeeping of `E(t) + int_0^t D - E(0) - int_0^t W`, where
/// `W` is the power of an optional body force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub e0: f64,
    pub energy: f64,
    pub dissipated: f64,
    pub work: f64,
    last: (f64, f64, f64),
}

impl EnergyBalance {
    pub fn new(t0: f64, first: &EnergySample, power: f64) -> Self {
        Self {
            e0: first.energy,
            energy: first.energy,
            dissipated: 0.0,
            work: 0.0,
            last: (t0, first.dissipation_rate, power),
        }
    }

    pub fn push(&mut self, t: f64, s: &EnergySample, power: f64) {
        let (t0, d0, w0) = self.last;
        let dt = t - t0;
        self.dissipated += 0.5 * dt * (d0 + s.dissipation_rate);
        self.work += 0.5 * dt * (w0 + power);
        self.energy = s.energy;
        self.last = (t, s.dissipation_rate, power);
    }

    /// `E(t) + int D - E(0) - int W`.
    pub fn defect(&self) -> f64 {
        self.energy + self.dissipated - self.e0 - self.work
    }

    /// Defect relative to `E(0)`; zero for an exactly balanced zero state.
    pub fn relative_defect(&self) -> f64 {
        super::relative(self.defect().abs(), self.e0.abs())
    }
}
