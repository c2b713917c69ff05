use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchflow_cli::commands::{self, Verdict};
use patchflow_cli::{CliError, Options, Overrides, ScenarioConfig};

#[derive(Parser)]
#[command(name = "patchflow", version, about = "Compressible density-patch flows on the periodic square")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the time series, marker tables and summary.
    Run(Common),
    /// Check the spectral operators against their symbols and identities.
    VerifyOperators(Common),
    /// Run a scenario with the identity diagnostics and check them.
    VerifyIdentities(Common),
    /// Fit the decay of the density jump for the configured exponents.
    DecayStudy(Common),
    /// Build the initial data only.
    InitOnly(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the sampling estimators.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid resolution replacing the configured one.
    #[arg(long)]
    resolution_override: Option<usize>,
    /// No progress output.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let path = self.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = ScenarioConfig::load(path)?;
        cfg.apply(&Overrides { out: self.out.clone(), seed: self.seed, resolution: self.resolution_override });
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> Options {
        Options { quiet: self.quiet }
    }
}

fn print_verdicts(verdicts: &[Verdict], quiet: bool) {
    if quiet {
        return;
    }
    for v in verdicts {
        println!(
            "{} {}: {:.4e} (threshold {:.4e})",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.threshold
        );
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(c) => {
            let s = commands::run(&c.scenario()?, c.options())?;
            print_verdicts(&s.verdicts, c.quiet);
            Ok(s.exit_code())
        }
        Command::VerifyIdentities(c) => {
            let s = commands::verify_identities(&c.scenario()?, c.options())?;
            print_verdicts(&s.verdicts, c.quiet);
            Ok(s.exit_code())
        }
        Command::DecayStudy(c) => {
            let s = commands::decay_study(&c.scenario()?, c.options())?;
            print_verdicts(&s.verdicts, c.quiet);
            Ok(s.exit_code())
        }
        Command::InitOnly(c) => {
            let r = commands::init_only(&c.scenario()?, c.options())?;
            print_verdicts(&r.verdicts, c.quiet);
            Ok(r.exit_code())
        }
        Command::VerifyOperators(c) => {
            // A scenario is optional here; only its output directory and seed matter.
            let cfg = match &c.config {
                Some(_) => Some(c.scenario()?),
                None => None,
            };
            let out = c
                .out
                .clone()
                .or_else(|| cfg.as_ref().map(|s| s.out_dir()))
                .unwrap_or_else(|| PathBuf::from("out/verify-operators"));
            let seed = c.seed.or(cfg.as_ref().map(|s| s.seed)).unwrap_or(0);
            let r = commands::verify_operators_to(&out, c.resolution_override.unwrap_or(64), seed)?;
            if !c.quiet {
                for s in &r.symbols {
                    println!("{} {}: {:.3e}", if s.pass { "PASS" } else { "FAIL" }, s.operator, s.error);
                }
                for s in &r.identities {
                    println!("{} {}: {:.3e}", if s.pass { "PASS" } else { "FAIL" }, s.identity, s.error);
                }
            }
            Ok(if r.pass { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("patchflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
