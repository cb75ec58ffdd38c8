use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dualgeo_core::geometry::Fault;
use dualgeo_core::scenario::catalog::inspect;
use dualgeo_core::scenario::run::Status;
use dualgeo_core::scenario::{check_suite, load_config, run, Analysis, ScenarioConfig, SuiteOptions};

const OUT_ENV: &str = "DUALGEO_OUT";

/// Hamiltonian flows as geodesics of a dual conformal geometry.
#[derive(Parser)]
#[command(name = "dualgeo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis a scenario file requests and write its artifacts.
    ///
    /// Exit status: 0 when all analyses pass, 1 when one fails or errors,
    /// 2 when the config is invalid. DUALGEO_OUT overrides the output directory.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
    },
    /// Print metric, connection, curvature and M-form blocks at a point as JSON.
    Inspect {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Comma-separated coordinates followed by the evolution parameter, e.g. `0.1,0.2,0,0.5`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        point: Vec<f64>,
    },
    /// Run the invariant suite and print one line per check.
    Check {
        /// Reduced sample counts (default).
        #[arg(long, conflicts_with = "full")]
        quick: bool,
        /// Larger sample counts and the grid-refinement sweep.
        #[arg(long)]
        full: bool,
        /// Inject a deliberate fault; the affected checks must fail.
        #[arg(long, value_enum)]
        fault: Option<FaultArg>,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run only the five-dimensional field analyses of a scenario.
    Fields {
        /// Scenario file (TOML); its `[maxwell]` table sets the grid.
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    /// Flip the sign of the mixed gauge connection block.
    FlipGamma4,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::FlipGamma4 => Fault::FlipGamma4,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run_scenario(&config, None),
        Command::Fields { config } => run_scenario(&config, Some(vec![Analysis::Fields])),
        Command::Inspect { config, point } => inspect_point(&config, &point),
        Command::Check {
            full, fault, json, ..
        } => {
            let base = if full { SuiteOptions::full() } else { SuiteOptions::quick() };
            let report = check_suite(SuiteOptions {
                fault: fault.map(Fault::from),
                ..base
            });
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for e in &report.entries {
                    let mark = if e.passed { "PASS" } else { "FAIL" };
                    let detail = if e.detail.is_empty() { String::new() } else { format!("  {}", e.detail) };
                    println!("{mark} {:<44} {:>12.4e}  {}{detail}", e.name, e.measured, e.bound);
                }
                let failed = report.failures().count();
                println!(
                    "{} checks, {} failed, {:.1}s",
                    report.entries.len(),
                    failed,
                    report.elapsed_s
                );
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    load_config(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn run_scenario(path: &Path, only: Option<Vec<Analysis>>) -> ExitCode {
    let mut cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(a) = only {
        cfg.analyses = a;
    }
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        cfg.output = PathBuf::from(dir);
    }
    let art = match run(&cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for (name, rec) in &art.manifest.analyses {
        let status = match rec.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Error => "ERROR",
        };
        match &rec.message {
            Some(m) => println!("{status:<6} {name}: {m}"),
            None => println!("{status:<6} {name}"),
        }
    }
    println!("wrote {} files to {}", art.files.len(), art.dir.display());
    ExitCode::from(art.exit_code())
}

fn inspect_point(path: &Path, point: &[f64]) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let Some((s, x)) = point.split_last().filter(|(_, x)| x.len() == cfg.dim()) else {
        eprintln!("error: --point takes {} coordinates followed by the parameter value", cfg.dim());
        return ExitCode::from(2);
    };
    match inspect(&cfg, x, *s) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("value serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
