use std::path::{Path, PathBuf};
use std::process::Command;

use patchflow::{DtControl, RunStatus};
use patchflow_cli::checkpoint::{Checkpoint, MAGIC, SCHEMA_VERSION};
use patchflow_cli::commands::{self, Options};
use patchflow_cli::config::OutputConfig;
use patchflow_cli::{CliError, ScenarioConfig};
use tempfile::TempDir;

const QUIET: Options = Options { quiet: true };

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn scenario(name: &str, out: &Path) -> ScenarioConfig {
    let mut c = ScenarioConfig::load(&scenario_path(name)).unwrap();
    c.output.dir = Some(out.to_path_buf());
    c
}

/// The circle patch shrunk to a few seconds of work.
fn small_patch(out: &Path) -> ScenarioConfig {
    let mut c = scenario("circle-patch-small", out);
    c.grid.n = 64;
    c.t_end = 0.1;
    c.step.dt = DtControl::Fixed { dt: 0.01 };
    c.diagnostics.record_every = 2;
    c.diagnostics.probe.holder_budget = 4000;
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchflow"))
}

fn write_config(dir: &Path, c: &ScenarioConfig) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(c).unwrap()).unwrap();
    p
}

fn column(csv: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(csv).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|row| row.unwrap()[idx].to_string()).collect()
}

#[test]
fn bundled_scenarios_validate() {
    let dir = scenario_path("x").parent().unwrap().to_path_buf();
    let mut count = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let c = ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(p.file_stem().unwrap().to_str().unwrap(), c.name);
        count += 1;
    }
    assert!(count >= 4);
}

#[test]
fn n_not_a_power_of_two_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let mut c = scenario("constant-state", tmp.path());
    c.grid.n = 100;
    let e = c.validate().unwrap_err();
    assert!(matches!(e, CliError::Config(_)));
    assert!(e.to_string().contains("grid.n"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn unknown_and_missing_keys_name_their_path() {
    let text = std::fs::read_to_string(scenario_path("constant-state")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["grid"]["resolution"] = 3.into();
    let e = ScenarioConfig::from_json(&v.to_string()).unwrap_err().to_string();
    assert!(e.contains("grid") && e.contains("resolution"), "{e}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["laws"]["preset"]["viscosity"]["kind"] = "sutherland".into();
    let e = ScenarioConfig::from_json(&v.to_string()).unwrap_err().to_string();
    assert!(e.contains("laws.preset.viscosity"), "{e}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("t_end");
    let e = ScenarioConfig::from_json(&v.to_string()).unwrap_err().to_string();
    assert!(e.contains("t_end"), "{e}");
}

#[test]
fn value_checks_name_their_field() {
    let tmp = TempDir::new().unwrap();
    let base = scenario("constant-state", tmp.path());
    let cases: Vec<(Box<dyn Fn(&mut ScenarioConfig)>, &str)> = vec![
        (Box::new(|c| c.t_end = -1.0), "t_end"),
        (Box::new(|c| c.checks.jump_median = 0.0), "checks.jump_median"),
        (Box::new(|c| c.laws.rho_ref = 0.0), "laws.rho_ref"),
        (Box::new(|c| c.decay.p = vec![patchflow_cli::config::Exponent::Finite(0.5)]), "decay.p[0]"),
        (Box::new(|c| c.patch.alpha = 1.5), "patch.alpha"),
    ];
    for (edit, field) in cases {
        let mut c = base.clone();
        edit(&mut c);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains(field), "{field}: {e}");
    }
}

#[test]
fn exponents_parse_as_numbers_or_inf() {
    let text = std::fs::read_to_string(scenario_path("frozen-decay")).unwrap();
    let c = ScenarioConfig::from_json(&text).unwrap();
    let p: Vec<f64> = c.decay.p.iter().map(|e| e.value()).collect();
    assert_eq!(p, vec![2.0, 4.0, f64::INFINITY]);
    assert_eq!(c.decay.p[2].label(), "inf");
}

#[test]
fn hash_ignores_the_output_directory_only() {
    let tmp = TempDir::new().unwrap();
    let a = scenario("constant-state", tmp.path());
    let mut b = a.clone();
    b.output.dir = Some(PathBuf::from("elsewhere"));
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let tmp = TempDir::new().unwrap();
    let c = scenario("constant-state", tmp.path());
    let rep = commands::init_only(&c, QUIET).unwrap();
    assert_eq!(rep.exit_code(), 0);
    let path = tmp.path().join("initial_state.json");
    let ck = Checkpoint::read(&path).unwrap();
    assert_eq!(ck.magic, MAGIC);
    assert_eq!(ck.schema_version, SCHEMA_VERSION);
    assert_eq!(ck.config_hash, c.hash());
    let again = tmp.path().join("again.json");
    ck.write(&again).unwrap();
    assert_eq!(Checkpoint::read(&again).unwrap(), ck);

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["magic"] = "something-else".into();
    std::fs::write(&again, v.to_string()).unwrap();
    assert!(Checkpoint::read(&again).unwrap_err().to_string().contains("not a patchflow checkpoint"));
    v["magic"] = MAGIC.into();
    v["schema_version"] = 99.into();
    std::fs::write(&again, v.to_string()).unwrap();
    assert!(Checkpoint::read(&again).unwrap_err().to_string().contains("schema version"));
}

#[test]
fn restart_from_checkpoint_continues_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_patch(&tmp.path().join("a"));
    c.output = OutputConfig { checkpoint_every: 5, ..c.output.clone() };
    c.output.dir = Some(tmp.path().join("a"));
    let s = commands::run(&c, QUIET).unwrap();
    assert_eq!(s.status, RunStatus::Completed);
    let mid = Checkpoint::read(&tmp.path().join("a/checkpoints/step_00000005.json")).unwrap();
    let end = Checkpoint::read(&tmp.path().join("a/checkpoints/final.json")).unwrap();
    assert_eq!(end.step, 10);

    let laws = c.laws().unwrap();
    let solver = patchflow::Solver::new(c.grid.n, c.grid.l, laws, c.step.clone()).unwrap();
    let mut state = mid.state;
    // The run loop's step choice: fixed dt, the last one stretched to t_end.
    for _ in 0..5 {
        let dt = solver.cfl_dt(&state);
        let rest = c.t_end - state.t;
        solver.step_with_dt(&mut state, if rest <= 1.01 * dt { rest } else { dt }).unwrap();
    }
    assert_eq!(state.u, end.state.u);
    assert_eq!(state.particles, end.state.particles);
}

#[test]
fn constant_state_run_has_zero_residuals() {
    let tmp = TempDir::new().unwrap();
    let c = scenario("constant-state", tmp.path());
    let s = commands::run(&c, QUIET).unwrap();
    assert_eq!(s.status, RunStatus::Completed);
    assert_eq!(s.exit_code(), 0);
    assert!((s.t - 1.0).abs() < 1e-12);
    let csv = tmp.path().join("timeseries.csv");
    for name in [
        "energy",
        "energy_defect",
        "a1",
        "a2",
        "a3",
        "flux_residual",
        "vorticity_residual",
        "stress_normal_median",
        "flux_jump_median",
        "vorticity_jump_median",
        "lagrangian_mass",
        "jump_f_linf",
        "grid_mass_drift",
    ] {
        for v in column(&csv, name) {
            assert!(v.is_empty() || v.parse::<f64>().unwrap() == 0.0, "{name} = {v}");
        }
    }
    let h = column(&csv, "hoff2_residual");
    assert!(h.iter().any(|v| !v.is_empty()));
    for v in h.iter().filter(|v| !v.is_empty()) {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
    for f in ["summary.json", "markers.csv", "checkpoints/final.json", "heatmaps/rho_final.pgm", "heatmaps/flux_final.ppm"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "completed");
    assert_eq!(summary["provenance"]["config_hash"], c.hash());
}

#[test]
fn init_only_on_constant_data_reports_zero_c0() {
    let tmp = TempDir::new().unwrap();
    let c = scenario("constant-state", tmp.path());
    let r = commands::init_only(&c, QUIET).unwrap();
    assert_eq!(r.smallness.c0, 0.0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("init_report.json")).unwrap()).unwrap();
    assert_eq!(v["smallness"]["c0"].as_f64(), Some(0.0));
}

#[test]
fn init_only_on_a_patch_reports_positive_c0() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_patch(tmp.path());
    c.grid.n = 64;
    let r = commands::init_only(&c, QUIET).unwrap();
    assert!(r.smallness.c0 > 0.0);
    assert!(r.smallness.jump_linf > 0.0);
    assert!(r.elliptic.relative_residual < 1e-8);
}

#[test]
fn verify_operators_passes() {
    let tmp = TempDir::new().unwrap();
    let r = commands::verify_operators_to(tmp.path(), 64, 7).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.symbols.len() >= 14);
    assert!(tmp.path().join("verify_operators.json").exists());
    assert!(commands::verify_operators_to(tmp.path(), 48, 7).is_err());
}

#[test]
fn frozen_decay_study_recovers_unit_rate() {
    let tmp = TempDir::new().unwrap();
    let c = scenario("frozen-decay", tmp.path());
    let s = commands::decay_study(&c, QUIET).unwrap();
    assert_eq!(s.exit_code(), 0, "{:?}", s.verdicts);
    let study = s.decay.unwrap();
    assert!((study.nu.low - 1.0).abs() < 1e-9);
    assert_eq!(study.fits.len(), 3);
    for f in &study.fits {
        assert!((f.fitted_rate + 1.0).abs() < 0.02, "{f:?}");
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = TempDir::new().unwrap();
    let a = small_patch(&tmp.path().join("a"));
    let mut b = a.clone();
    b.output.dir = Some(tmp.path().join("b"));
    commands::run(&a, QUIET).unwrap();
    commands::run(&b, QUIET).unwrap();
    for f in ["timeseries.csv", "markers.csv"] {
        let x = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let y = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn verdicts_refer_only_to_checks_that_ran() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_patch(tmp.path());
    c.diagnostics.lagrangian_mass = false;
    let s = commands::run(&c, QUIET).unwrap();
    let names: Vec<&str> = s.verdicts.iter().map(|v| v.name.as_str()).collect();
    assert!(!names.contains(&"lagrangian_mass"));
    assert!(!names.contains(&"hoff2_residual"));
    assert!(names.contains(&"energy_defect"));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();

    let ok = scenario("constant-state", &tmp.path().join("ok"));
    let st = bin().args(["run", "--quiet", "--config"]).arg(write_config(tmp.path(), &ok)).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let mut bad = ok.clone();
    bad.grid.n = 100;
    let out = bin().args(["run", "--config"]).arg(write_config(tmp.path(), &bad)).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.n"));

    let out = bin().args(["run", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A check that cannot pass.
    let mut strict = small_patch(&tmp.path().join("strict"));
    strict.checks.energy_defect = 1e-300;
    let out = bin().args(["run", "--config"]).arg(write_config(tmp.path(), &strict)).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL energy_defect"), "{stdout}");
    assert!(stdout.contains("PASS elliptic_residual"), "{stdout}");

    // A step far beyond the transport limit makes the state invalid.
    let mut wild = small_patch(&tmp.path().join("wild"));
    wild.step.dt = DtControl::Fixed { dt: 50.0 };
    wild.t_end = 100.0;
    let out = bin().args(["run", "--quiet", "--config"]).arg(write_config(tmp.path(), &wild)).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_the_file() {
    let tmp = TempDir::new().unwrap();
    let c = scenario("constant-state", &tmp.path().join("ignored"));
    let cfg = write_config(tmp.path(), &c);
    let out = tmp.path().join("chosen");
    let st = bin()
        .args(["init-only", "--quiet", "--seed", "11", "--resolution-override", "32", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("init_report.json")).unwrap()).unwrap();
    assert_eq!(v["provenance"]["seed"], 11);
    let ck = Checkpoint::read(&out.join("initial_state.json")).unwrap();
    assert_eq!(ck.state.n(), 32);
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn verify_operators_binary_writes_json() {
    let tmp = TempDir::new().unwrap();
    let out = bin().args(["verify-operators", "--resolution-override", "32", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
    assert!(tmp.path().join("verify_operators.json").exists());
}
