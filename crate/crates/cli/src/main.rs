use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbdo_core::pipeline::selftest::run_selftest;
use sbdo_core::pipeline::{Pipeline, RunConfig};
use sbdo_core::Result;

/// Anomaly-aware shape optimization in reduced latent spaces.
#[derive(Parser)]
#[command(name = "sbdo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Override a config key, e.g. `--set sample.n=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample designs and deform the baseline into a dataset.
    Sample(ConfigArgs),
    /// Fit the latent model and choose K.
    Fit(ConfigArgs),
    /// Compute the anomaly threshold and distance diagnostics.
    Threshold(ConfigArgs),
    /// Run every configured optimization.
    Optimize(ConfigArgs),
    /// Write convergence and comparison tables for completed runs.
    Report(ConfigArgs),
    /// All stages in order.
    Run(ConfigArgs),
    /// Quick invariant checks.
    Selftest,
}

fn open(args: &ConfigArgs) -> Result<Pipeline> {
    Pipeline::open(RunConfig::load(&args.config, &args.overrides)?)
}

fn print_report(r: &sbdo_core::pipeline::ReportOutcome) {
    for row in &r.rows {
        let red = row.reduction_pct.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "n/a".into());
        print!(
            "report: {} best_f={} reduction={} penalized={}/{}",
            row.label, row.best_f, red, row.penalized, row.evaluations
        );
        if let Some(p) = &row.posthoc {
            print!(" posthoc_exceeding={}/{} ({:.4})", p.exceeding, p.feasible, p.fraction);
        }
        println!();
    }
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Sample(a) => {
            let s = open(&a)?.sample()?;
            println!(
                "sample: accepted {} of {} attempts (acceptance ratio {:.4}, rejected {}); D={} M={}",
                s.accepted,
                s.attempts,
                s.acceptance_ratio,
                s.attempts - s.accepted,
                s.dim,
                s.variables
            );
        }
        Command::Fit(a) => {
            let f = open(&a)?.fit()?;
            println!(
                "fit: {} K={} ({}) explained={:.6} effective_rank={}",
                f.kind.name(),
                f.k,
                f.selection,
                f.explained,
                f.effective_rank
            );
        }
        Command::Threshold(a) => {
            let t = open(&a)?.threshold()?;
            println!(
                "threshold: phi_max={} (tukey_fence={} literal_iqr={}) exceedance reconstructed={:.4} uniform={:.4} ks={:.4}",
                t.threshold.phi_max,
                t.threshold.tukey_fence,
                t.threshold.literal_iqr,
                t.exceedance_reconstructed,
                t.exceedance_uniform,
                t.chi2_fresh.ks_statistic
            );
        }
        Command::Optimize(a) => {
            for r in open(&a)?.optimize()? {
                println!(
                    "optimize: {} best_f={} baseline={} reduction={:.2}% evaluated={} penalized={}",
                    r.label, r.best_f, r.baseline, r.reduction_pct, r.evaluated, r.penalized
                );
            }
        }
        Command::Report(a) => print_report(&open(&a)?.report()?),
        Command::Run(a) => print_report(&open(&a)?.run_all()?),
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
