use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use tdi_harness::verify::{run_suite, Suite, VerifyOptions};
use tdi_harness::{output_root, report_correlations, report_curves, run, sweep, HarnessError, RunConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "tdi", version, about = "Interference experiments: runs, sweeps, reports and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every oracle and identity check; exits 1 on any failure.
    Verify {
        /// Restrict to one suite (gradients, rho_prime, identities, dp, stats).
        #[arg(long)]
        suite: Option<String>,
        /// Random draws per oracle.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 1.0)]
        r2_coefficient: f64,
    },
    /// Execute one run under the output root.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Execute a grid of runs on a bounded worker pool.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate completed runs into figure tables.
    Report {
        #[arg(value_enum)]
        kind: ReportKind,
        /// Run directories or sweep directories, searched recursively.
        #[arg(short, long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Output directory; defaults to `<output root>/reports/<kind>`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Describe the environment a run config would build.
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportKind {
    Correlations,
    Curves,
}

#[derive(Subcommand)]
enum EnvCmd {
    Inspect {
        #[arg(short, long)]
        config: PathBuf,
    },
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn verify_cmd(suite: Option<String>, opts: &VerifyOptions, json: Option<PathBuf>) -> anyhow::Result<bool> {
    let suites: Vec<Suite> = match suite {
        None => Suite::ALL.to_vec(),
        Some(name) => vec![*Suite::ALL
            .iter()
            .find(|s| s.name() == name)
            .with_context(|| format!("unknown suite {name}"))?],
    };
    let mut reports = Vec::new();
    let mut failed = 0;
    for s in suites {
        let rep = run_suite(s, opts)?;
        for c in &rep.checks {
            println!(
                "{} {}/{}: {:e} (tolerance {:e}) {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.name,
                c.value,
                c.tolerance,
                c.detail
            );
            failed += usize::from(!c.passed);
        }
        println!("suite {} finished in {:.1}s", s.name(), rep.seconds);
        reports.push(rep);
    }
    let n: usize = reports.iter().map(|r| r.checks.len()).sum();
    println!("{} of {n} checks passed", n - failed);
    if let Some(p) = json {
        let v = serde_json::json!({"passed": failed == 0, "n_checks": n, "n_failed": failed, "suites": reports});
        std::fs::write(&p, serde_json::to_string_pretty(&v)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(failed == 0)
}

fn main_inner(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Verify { suite, draws, json, r2_coefficient } => {
            let opts = VerifyOptions { draws, r2_coefficient };
            Ok(if verify_cmd(suite, &opts, json)? { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Run { config } => {
            let cfg = RunConfig::from_json(&read(&config)?)?;
            let out = run(&cfg, &output_root())?;
            println!("{}", out.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { config, jobs } => {
            let cfg = SweepConfig::from_json(&read(&config)?)?;
            let s = sweep(&cfg, &output_root(), jobs)?;
            for e in s.entries.iter().filter(|e| e.error.is_some()) {
                eprintln!("{}: {:?}: {}", e.name, e.status, e.error.as_deref().unwrap_or(""));
            }
            println!("{} of {} runs ok under {}", s.n_ok, s.n_runs, output_root().join(&s.name).display());
            Ok(if s.n_failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Report { kind, input, output } => {
            let name = match kind {
                ReportKind::Correlations => "correlations",
                ReportKind::Curves => "curves",
            };
            let out = output.unwrap_or_else(|| output_root().join("reports").join(name));
            let (files, notices) = match kind {
                ReportKind::Correlations => {
                    let r = report_correlations(&input, &out)?;
                    (r.files, r.notices)
                }
                ReportKind::Curves => {
                    let r = report_curves(&input, &out)?;
                    (r.files, r.notices)
                }
            };
            for n in notices {
                eprintln!("notice: {n}");
            }
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Env { cmd: EnvCmd::Inspect { config } } => {
            let cfg = RunConfig::from_json(&read(&config)?)?;
            cfg.validate()?;
            println!("{}", serde_json::to_string_pretty(&tdi_harness::run::inspect(&cfg)?)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<tdi_harness::ConfigError>().is_some()
                || e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
