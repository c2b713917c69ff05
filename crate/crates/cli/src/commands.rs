//! The subcommands. Each returns a report whose verdicts decide the exit
//! code; configuration, output and numerical failures are [`CliError`]s.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use patchflow::constitutive::NuBounds;
use patchflow::diagnostics::decay::{jump_decay_fit, DecayFit};
use patchflow::diagnostics::monitors::BlowupReport;
use patchflow::initdata::{build_initial_data, smallness_report, SmallnessReport, VelocitySolve};
use patchflow::solver::effective_flux_direct;
use patchflow::{
    run_with, ConstitutiveLaws, DiagnosticsConfig, DiagnosticsRecord, Error, FluidState, Recorder, RunOutcome,
    RunStatus, Solver, Spectral, VectorGrid,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::output::{write_json, write_pgm, write_ppm_signed, MarkerWriter, TimeSeriesWriter};
use crate::verify::{verify_operators, OperatorReport};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// No progress lines on stderr.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    /// Passes when `value <= threshold`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
}

impl Provenance {
    fn of(cfg: &ScenarioConfig) -> Self {
        Self { scenario: cfg.name.clone(), config_hash: cfg.hash(), code_version: CODE_VERSION.into(), seed: cfg.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub nu: NuBounds,
    pub frozen_velocity: bool,
    pub fits: Vec<DecayFit>,
}

/// End-of-run report of `run`, `verify-identities` and `decay-study`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub status: RunStatus,
    pub steps: u64,
    pub t: f64,
    pub error: Option<String>,
    pub breach: Option<BlowupReport>,
    pub final_record: Option<DiagnosticsRecord>,
    pub elliptic: VelocitySolve,
    pub c0: Option<f64>,
    /// Verdicts of the checks this command ran, and only those.
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayStudy>,
    pub provenance: Provenance,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::InvalidState => 3,
            RunStatus::BlowupMonitor => 1,
            RunStatus::Completed if self.verdicts.iter().all(|v| v.pass) => 0,
            RunStatus::Completed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub band: [f64; 2],
    pub elliptic: VelocitySolve,
    pub smallness: SmallnessReport,
    pub grid_mass: f64,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
}

impl InitReport {
    pub fn exit_code(&self) -> i32 {
        if self.verdicts.iter().all(|v| v.pass) {
            0
        } else {
            1
        }
    }
}

fn core_error(e: Error) -> CliError {
    match e {
        Error::InvalidInput(_) | Error::InvalidLaw(_) | Error::InvalidGrid(_) | Error::OutOfBand { .. } => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

fn prepare(cfg: &ScenarioConfig) -> Result<(Arc<ConstitutiveLaws>, PathBuf), CliError> {
    cfg.validate()?;
    let laws = cfg.laws()?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    Ok((laws, out))
}

fn heatmaps(out: &Path, tag: &str, state: &FluidState, laws: &ConstitutiveLaws) -> Result<(), CliError> {
    let dir = out.join("heatmaps");
    std::fs::create_dir_all(&dir)?;
    let sp = Spectral::new(state.n(), state.l()).map_err(core_error)?;
    let div = sp.divergence(&state.u).map_err(core_error)?;
    let flux = effective_flux_direct(laws, state.rho(), &div);
    let rot = sp.rot2(&state.u).map_err(core_error)?;
    write_pgm(&dir.join(format!("rho_{tag}.pgm")), state.rho())?;
    write_ppm_signed(&dir.join(format!("flux_{tag}.ppm")), &flux)?;
    write_ppm_signed(&dir.join(format!("vorticity_{tag}.ppm")), &rot)?;
    Ok(())
}

/// Everything a finished run leaves for the verdicts.
pub struct Execution {
    pub outcome: RunOutcome,
    pub records: Vec<DiagnosticsRecord>,
    pub recorder: Recorder,
    pub solve: VelocitySolve,
    pub c0: Option<f64>,
    pub laws: Arc<ConstitutiveLaws>,
    pub wall_seconds: f64,
}

/// Builds the initial data, steps to `t_end` and streams the outputs.
pub fn execute(cfg: &ScenarioConfig, diag: DiagnosticsConfig, opts: Options) -> Result<Execution, CliError> {
    let clock = Instant::now();
    let (laws, out) = prepare(cfg)?;
    let data = build_initial_data(&cfg.patch, &cfg.velocity, &cfg.grid, &laws).map_err(core_error)?;
    let mut state = data.state;
    if cfg.step.frozen_velocity {
        // The kinematic mode starts at rest, not at the mollified target.
        state.u = VectorGrid::zeros(state.n(), state.l());
    }
    let c0 = if diag.monitors {
        Some(smallness_report(&state, &laws, &diag.probe).map_err(core_error)?.c0)
    } else {
        None
    };
    if cfg.output.heatmaps {
        heatmaps(&out, "initial", &state, &laws)?;
    }
    let solver = Solver::new(cfg.grid.n, cfg.grid.l, laws.clone(), cfg.step.clone()).map_err(core_error)?;
    let mut recorder = Recorder::new(diag, &solver, laws.clone(), &state).map_err(core_error)?;
    if let Some(c0) = c0 {
        recorder.set_c0(c0);
    }

    let mut series = TimeSeriesWriter::create(&out.join("timeseries.csv"))?;
    let mut markers = if cfg.output.markers { Some(MarkerWriter::create(&out.join("markers.csv"))?) } else { None };
    let ckpt_dir = out.join("checkpoints");
    if cfg.output.checkpoint_every > 0 || cfg.output.final_checkpoint {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let hash = cfg.hash();
    let mut records = Vec::new();
    let mut io_error: Option<CliError> = None;
    let mut sink = |o: &patchflow::diagnostics::recorder::RecordOutput| -> patchflow::Result<()> {
        let r = &o.record;
        let written = series.write(r).and_then(|_| match (&mut markers, &o.markers) {
            (Some(w), Some(m)) => w.write(r.step, r.t, m),
            _ => Ok(()),
        });
        if let Err(e) = written {
            io_error = Some(e);
            return Err(Error::InvalidInput("output write failed".into()));
        }
        if !opts.quiet {
            eprintln!(
                "step {:>6}  t {:.4}  E {:.6e}  defect {:+.3e}  A1 {:.4e}",
                r.step, r.t, r.energy, r.energy_defect, r.a1
            );
        }
        records.push(r.clone());
        Ok(())
    };
    let every = cfg.output.checkpoint_every;
    let mut ckpt_error: Option<CliError> = None;
    let mut on_step = |s: &FluidState, step: u64| -> patchflow::Result<()> {
        if every > 0 && step % every == 0 {
            let path = ckpt_dir.join(format!("step_{step:08}.json"));
            if let Err(e) = Checkpoint::new(&hash, step, s).write(&path) {
                ckpt_error = Some(e);
                return Err(Error::InvalidInput("checkpoint write failed".into()));
            }
        }
        Ok(())
    };
    let result = run_with(&solver, &mut state, cfg.t_end, &mut recorder, &mut sink, &mut on_step);
    if let Some(e) = io_error.take().or(ckpt_error.take()) {
        return Err(e);
    }
    let outcome = result.map_err(|e| CliError::Numerical(e.to_string()))?;
    series.finish()?;
    if let Some(m) = markers {
        m.finish()?;
    }
    if cfg.output.final_checkpoint {
        Checkpoint::new(&hash, outcome.steps, &state).write(&ckpt_dir.join("final.json"))?;
    }
    if cfg.output.heatmaps && outcome.status != RunStatus::InvalidState {
        heatmaps(&out, "final", &state, &laws)?;
    }
    Ok(Execution {
        outcome,
        records,
        recorder,
        solve: data.solve,
        c0,
        laws,
        wall_seconds: clock.elapsed().as_secs_f64(),
    })
}

fn max_of<'a>(values: impl Iterator<Item = Option<f64>> + 'a) -> Option<f64> {
    values.flatten().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| if v > m || v.is_nan() { v } else { m })))
}

/// Number of strict decreases along the records.
fn decreases(records: &[DiagnosticsRecord], get: impl Fn(&DiagnosticsRecord) -> Option<f64>) -> usize {
    records.windows(2).filter(|w| matches!((get(&w[0]), get(&w[1])), (Some(a), Some(b)) if b < a)).count()
}

fn summary(command: &str, cfg: &ScenarioConfig, ex: &Execution, verdicts: Vec<Verdict>, decay: Option<DecayStudy>) -> RunSummary {
    RunSummary {
        command: command.into(),
        status: ex.outcome.status,
        steps: ex.outcome.steps,
        t: ex.outcome.t,
        error: ex.outcome.error.clone(),
        breach: ex.outcome.breach.clone(),
        final_record: ex.records.last().cloned(),
        elliptic: ex.solve.clone(),
        c0: ex.c0,
        verdicts,
        decay,
        provenance: Provenance::of(cfg),
        wall_seconds: ex.wall_seconds,
    }
}

fn elliptic_verdict(cfg: &ScenarioConfig, solve: &VelocitySolve) -> Verdict {
    Verdict::at_most("elliptic_residual", solve.relative_residual, cfg.checks.elliptic_residual)
}

/// Verdicts every run reports: elliptic residual, functional monotonicity
/// and the sigma weight.
fn common_verdicts(cfg: &ScenarioConfig, ex: &Execution) -> Vec<Verdict> {
    let r = &ex.records;
    let mut v = vec![elliptic_verdict(cfg, &ex.solve)];
    let dec = decreases(r, |x| Some(x.a1))
        + decreases(r, |x| Some(x.a2))
        + decreases(r, |x| Some(x.a3))
        + decreases(r, |x| x.theta);
    v.push(Verdict::at_most("functionals_monotone", dec as f64, 0.0));
    let sigma = r.iter().map(|x| (x.sigma - x.t.min(1.0)).abs()).fold(0.0, f64::max);
    v.push(Verdict::at_most("sigma_weight", sigma, 0.0));
    v
}

pub fn run(cfg: &ScenarioConfig, opts: Options) -> Result<RunSummary, CliError> {
    let ex = execute(cfg, cfg.diagnostics(), opts)?;
    let mut v = common_verdicts(cfg, &ex);
    // The kinematic mode changes the density without moving anything, so
    // neither the energy balance nor the Lagrangian mass relation applies.
    let physical = !cfg.step.frozen_velocity;
    if physical && ex.outcome.status == RunStatus::Completed {
        if let Some(last) = ex.records.last() {
            v.push(Verdict::at_most("energy_defect", last.energy_defect.abs(), cfg.checks.energy_defect));
        }
    }
    if let Some(m) = max_of(ex.records.iter().map(|r| r.lagrangian_mass)).filter(|_| physical) {
        v.push(Verdict::at_most("lagrangian_mass", m, cfg.checks.lagrangian_mass));
    }
    let s = summary("run", cfg, &ex, v, None);
    write_json(&cfg.out_dir().join("summary.json"), &s)?;
    Ok(s)
}

/// Runs with the identity diagnostics switched on and checks the flux and
/// vorticity representations, the jump identities and the Hoff identity.
pub fn verify_identities(cfg: &ScenarioConfig, opts: Options) -> Result<RunSummary, CliError> {
    let mut diag = cfg.diagnostics();
    diag.identities = true;
    diag.jumps = true;
    diag.hoff2 = true;
    let ex = execute(cfg, diag, opts)?;
    let c = &cfg.checks;
    let centred = || ex.records.iter().filter(|r| r.udot_order == 2);
    // The mollified initial velocity is not in stress balance across the
    // interface; the jump identities are checked for t > 0.
    let later = || ex.records.iter().filter(|r| r.t > 0.0);
    let mut v = common_verdicts(cfg, &ex);
    let pairs = [
        ("flux_residual", max_of(centred().map(|r| r.flux_residual)), c.flux_residual),
        ("vorticity_residual", max_of(centred().map(|r| r.vorticity_residual)), c.vorticity_residual),
        ("stress_normal_median", max_of(later().map(|r| r.stress_normal_median)), c.jump_median),
        ("flux_jump_median", max_of(later().map(|r| r.flux_jump_median)), c.jump_median),
        ("vorticity_jump_median", max_of(later().map(|r| r.vorticity_jump_median)), c.jump_median),
        ("hoff2_residual", max_of(ex.recorder.hoff2_history().iter().map(|h| Some(h.residual))), c.hoff2_residual),
    ];
    for (name, value, th) in pairs {
        // A check with no sample did not run and gets no verdict.
        if let Some(x) = value {
            v.push(Verdict::at_most(name, x, th));
        }
    }
    let s = summary("verify-identities", cfg, &ex, v, None);
    write_json(&cfg.out_dir().join("summary.json"), &s)?;
    Ok(s)
}

/// Fits the decay of the density jump for every configured exponent.
pub fn decay_study(cfg: &ScenarioConfig, opts: Options) -> Result<RunSummary, CliError> {
    let ex = execute(cfg, cfg.diagnostics(), opts)?;
    let nu = ex.laws.nu_bounds(256).map_err(core_error)?;
    let mut v = vec![elliptic_verdict(cfg, &ex.solve)];
    let mut fits = Vec::new();
    let frozen = cfg.step.frozen_velocity;
    for p in &cfg.decay.p {
        let fit = jump_decay_fit(&ex.recorder.decay_history(p.value()), &nu, p.value())
            .map_err(|e| CliError::Numerical(format!("decay fit for p = {}: {e}", p.label())))?;
        v.push(Verdict {
            name: format!("decay_bound_p{}", p.label()),
            value: fit.fitted_rate,
            threshold: fit.predicted_rate + 0.1 * fit.predicted_rate.abs(),
            pass: fit.pass,
        });
        if frozen {
            let rel = (fit.fitted_rate + nu.low).abs() / nu.low;
            v.push(Verdict::at_most(format!("decay_rate_p{}", p.label()), rel, cfg.checks.decay_rate));
        }
        fits.push(fit);
    }
    let study = DecayStudy { nu, frozen_velocity: frozen, fits };
    let s = summary("decay-study", cfg, &ex, v, Some(study));
    write_json(&cfg.out_dir().join("summary.json"), &s)?;
    Ok(s)
}

/// Builds the initial data only: state dump, smallness and solve reports.
pub fn init_only(cfg: &ScenarioConfig, opts: Options) -> Result<InitReport, CliError> {
    let (laws, out) = prepare(cfg)?;
    let data = build_initial_data(&cfg.patch, &cfg.velocity, &cfg.grid, &laws).map_err(core_error)?;
    let smallness = smallness_report(&data.state, &laws, &cfg.diagnostics().probe).map_err(core_error)?;
    Checkpoint::new(&cfg.hash(), 0, &data.state).write(&out.join("initial_state.json"))?;
    if cfg.output.heatmaps {
        heatmaps(&out, "initial", &data.state, &laws)?;
    }
    let report = InitReport {
        band: laws.band(),
        verdicts: vec![elliptic_verdict(cfg, &data.solve)],
        elliptic: data.solve,
        grid_mass: data.state.grid_mass(),
        smallness,
        provenance: Provenance::of(cfg),
    };
    write_json(&out.join("init_report.json"), &report)?;
    if !opts.quiet {
        eprintln!("c0 = {:.6e}", report.smallness.c0);
    }
    Ok(report)
}

/// Symbol and identity checks of the spectral operators, written to
/// `out/verify_operators.json`.
pub fn verify_operators_to(out: &Path, n: usize, seed: u64) -> Result<OperatorReport, CliError> {
    if n < 8 || !n.is_power_of_two() {
        return Err(CliError::Config(format!("resolution must be a power of two >= 8, got {n}")));
    }
    std::fs::create_dir_all(out)?;
    let report = verify_operators(n, 2.0 * std::f64::consts::PI, seed, 100)?;
    write_json(&out.join("verify_operators.json"), &report)?;
    Ok(report)
}
