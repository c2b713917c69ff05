//! Simulator for two-dimensional compressible Navier-Stokes flow with a
//! density patch on the periodic torus.
//!
//! The density is carried by Lagrangian particles through the damped
//! variable `f(rho)`, the velocity is advanced by a semi-implicit
//! pseudo-spectral scheme, and the interface is tracked both by markers
//! and by a level set. The [`diagnostics`] module measures the energy
//! balance, Hoff functionals, effective-flux and vorticity representations
//! and the jump conditions across the interface.

pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod initdata;
pub mod interface;
pub mod interp;
pub mod quad;
pub mod solver;
pub mod spectral;
pub mod state;

pub use constitutive::{ConstitutiveLaws, LawPreset, NuBounds};
pub use error::{Error, Result};
pub use grid::{MatrixGrid, ScalarGrid, VectorGrid};
pub use spectral::{KernelKind, Spectral};
pub use diagnostics::recorder::{run, run_with, DiagnosticsConfig, DiagnosticsRecord, Recorder, RunOutcome, RunStatus};
pub use solver::{DtControl, Solver, StepConfig};
pub use state::FluidState;
