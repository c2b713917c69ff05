//! Fixtures shared by the kernel benchmarks.

use std::sync::Arc;

use patchflow::initdata::{build_initial_data, GaussianTerm, GridSpec, InitialVelocitySpec, PatchShape, PatchSpec};
use patchflow::{ConstitutiveLaws, FluidState, LawPreset, ScalarGrid};

pub const BOX: f64 = 8.0;

pub fn laws() -> Arc<ConstitutiveLaws> {
    Arc::new(ConstitutiveLaws::new(LawPreset::constant_viscosity(1.0, 1.4, 1.0, 0.0), 1.0, [0.25, 4.0]).unwrap())
}

/// A unit-radius patch of density 1.1 in a gentle vortex.
pub fn circle_patch(n: usize) -> (Arc<ConstitutiveLaws>, FluidState) {
    let laws = laws();
    let patch = PatchSpec::uniform(PatchShape::Circle { radius: 1.0 }, 1.1, 1.0, 0.5);
    let vel = InitialVelocitySpec {
        stream: vec![GaussianTerm { amplitude: 0.05, center: None, width: 0.6 }],
        potential: Vec::new(),
        delta: 0.1,
    };
    let state = build_initial_data(&patch, &vel, &GridSpec::new(n, BOX), &laws).unwrap().state;
    (laws, state)
}

/// A smooth periodic field with a few active modes.
pub fn smooth(n: usize) -> ScalarGrid {
    let k = 2.0 * std::f64::consts::PI / BOX;
    ScalarGrid::from_fn(n, BOX, |x, y| (k * x).sin() * (2.0 * k * y).cos() + 0.3 * (3.0 * k * (x + y)).cos())
}
