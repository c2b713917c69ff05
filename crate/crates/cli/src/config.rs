//! Scenario files: JSON with a fixed key tree, unknown keys rejected.
//! See `docs/output_schema.md` for the grammar.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use patchflow::constitutive::default_band;
use patchflow::initdata::{GridSpec, InitialVelocitySpec, PatchSpec};
use patchflow::{ConstitutiveLaws, DiagnosticsConfig, LawPreset, StepConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridSpec,
    pub laws: LawsConfig,
    pub patch: PatchSpec,
    pub velocity: InitialVelocitySpec,
    #[serde(default)]
    pub step: StepConfig,
    pub t_end: f64,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub checks: CheckThresholds,
    #[serde(default)]
    pub decay: DecayConfig,
    /// Seeds the sampling estimators; replaces `diagnostics.probe.seed`.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawsConfig {
    pub preset: LawPreset,
    pub rho_ref: f64,
    /// Admissible density band; `[min rho0 / 4, 4 max rho0]` when absent.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `out/<name>` when absent. `--out` replaces it.
    pub dir: Option<PathBuf>,
    /// Per-marker jump tables.
    pub markers: bool,
    /// Heatmaps of the final (and initial) density, flux and vorticity.
    pub heatmaps: bool,
    /// Steps between checkpoints; 0 writes none during the run.
    pub checkpoint_every: u64,
    /// Checkpoint of the final state.
    pub final_checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, markers: true, heatmaps: true, checkpoint_every: 0, final_checkpoint: true }
    }
}

/// Thresholds of the verdicts reported by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckThresholds {
    pub energy_defect: f64,
    pub lagrangian_mass: f64,
    pub elliptic_residual: f64,
    pub flux_residual: f64,
    pub vorticity_residual: f64,
    pub jump_median: f64,
    pub hoff2_residual: f64,
    /// Relative tolerance on the frozen-velocity decay rate `-nu_low`.
    pub decay_rate: f64,
}

impl Default for CheckThresholds {
    fn default() -> Self {
        Self {
            energy_defect: 0.02,
            lagrangian_mass: 0.01,
            elliptic_residual: 1e-8,
            flux_residual: 0.05,
            vorticity_residual: 0.05,
            jump_median: 0.10,
            hoff2_residual: 0.05,
            decay_rate: 0.02,
        }
    }
}

/// Exponent of a curve norm: a number `>= 1` or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(f64),
    Named(Infinity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Infinity {
    #[serde(rename = "inf")]
    Inf,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Named(Infinity::Inf) => f64::INFINITY,
        }
    }

    pub fn label(self) -> String {
        match self {
            Exponent::Finite(p) => format!("{p}"),
            Exponent::Named(_) => "inf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub p: Vec<Exponent>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self { p: vec![Exponent::Finite(2.0), Exponent::Finite(4.0), Exponent::Named(Infinity::Inf)] }
    }
}

/// Command-line replacements applied after loading.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path.is_empty() || path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out {
            self.output.dir = Some(dir.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.resolution {
            self.grid.n = n;
        }
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: patchflow::Error| CliError::Config(e.to_string());
        if self.name.trim().is_empty() {
            return Err(CliError::Config("name must not be empty".into()));
        }
        self.grid.validate().map_err(cfg)?;
        self.patch.validate(self.grid.l).map_err(cfg)?;
        self.velocity.validate(self.grid.l).map_err(cfg)?;
        self.step.validate().map_err(cfg)?;
        self.diagnostics.validate().map_err(cfg)?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(CliError::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.laws.rho_ref > 0.0 && self.laws.rho_ref.is_finite()) {
            return Err(CliError::Config(format!("laws.rho_ref must be positive, got {}", self.laws.rho_ref)));
        }
        for (i, p) in self.decay.p.iter().enumerate() {
            if !(p.value() >= 1.0) {
                return Err(CliError::Config(format!("decay.p[{i}] must be at least 1, got {}", p.label())));
            }
        }
        let c = &self.checks;
        let all = [
            ("energy_defect", c.energy_defect),
            ("lagrangian_mass", c.lagrangian_mass),
            ("elliptic_residual", c.elliptic_residual),
            ("flux_residual", c.flux_residual),
            ("vorticity_residual", c.vorticity_residual),
            ("jump_median", c.jump_median),
            ("hoff2_residual", c.hoff2_residual),
            ("decay_rate", c.decay_rate),
        ];
        for (name, v) in all {
            if !(v > 0.0) {
                return Err(CliError::Config(format!("checks.{name} must be positive, got {v}")));
            }
        }
        self.laws().map(|_| ())
    }

    /// The band, derived from the initial density when not given.
    pub fn band(&self) -> [f64; 2] {
        if let Some(b) = self.laws.band {
            return b;
        }
        let (n, l) = (self.grid.n, self.grid.l);
        let h = l / n as f64;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let r = self.patch.rho0([i as f64 * h, j as f64 * h], l);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        default_band(lo.min(self.laws.rho_ref), hi.max(self.laws.rho_ref))
    }

    pub fn laws(&self) -> Result<Arc<ConstitutiveLaws>, CliError> {
        ConstitutiveLaws::new(self.laws.preset.clone(), self.laws.rho_ref, self.band())
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("laws: {e}")))
    }

    /// Diagnostics settings with the scenario seed in place.
    pub fn diagnostics(&self) -> DiagnosticsConfig {
        let mut d = self.diagnostics.clone();
        d.probe.seed = self.seed;
        d
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    /// SHA-256 of the canonical JSON of the effective configuration. The
    /// output directory is left out: moving a run does not change it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
