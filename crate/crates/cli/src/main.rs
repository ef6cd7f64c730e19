use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fbpinn::config::RunConfig;
use fbpinn::experiment;

/// Train finite basis PINNs on 1D ODEs and write CSV/JSON artifacts.
#[derive(Parser)]
#[command(name = "fbpinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Root used when neither `--out` nor the config names an output directory.
    #[arg(long, global = true, env = "FBPINN_OUTPUT_ROOT", default_value = "fbpinn-out")]
    output_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run { config: PathBuf },
    /// Train every (subdomains, p) combination of the sweep lists.
    Sweep { config: PathBuf },
    /// Train the coarse network, freeze it, then train the local networks.
    Coarse { config: PathBuf },
}

fn output_dir(cli: &Cli, config: &RunConfig, name: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| cli.output_root.join(name))
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::from_file(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config)?;
            let out = output_dir(cli, &cfg, "run");
            let report = experiment::run(&cfg, &out)?;
            print_final(&report, &out);
        }
        Command::Coarse { config } => {
            let cfg = load(config)?;
            let out = output_dir(cli, &cfg, "coarse");
            let report = experiment::coarse(&cfg, &out)?;
            if let Some(e) = report.extra("coarse_low_frequency_l2_error") {
                println!("coarse network vs low-frequency component: relative L2 {e:.3e}");
            }
            print_final(&report, &out);
        }
        Command::Sweep { config } => {
            let cfg = load(config)?;
            let out = output_dir(cli, &cfg, "sweep");
            let cells = experiment::sweep(&cfg, &out)?;
            for c in &cells {
                match (c.final_loss, c.final_l2_error) {
                    (Some(loss), Some(l2)) => {
                        println!("J={:<3} p={:<5} loss={loss:.3e} l2={l2:.3e}", c.subdomains, c.p)
                    }
                    _ => println!("J={:<3} p={:<5} {}", c.subdomains, c.p, c.status),
                }
            }
            for (p, fewer, more) in experiment::scaling_inversions(&cells) {
                println!("inversion: p={p} J={more} reached a lower final loss than J={fewer}");
            }
            println!("wrote {}", out.join("sweep_summary.csv").display());
        }
    }
    Ok(())
}

fn print_final(report: &fbpinn::RunReport, out: &Path) {
    if let Some(m) = &report.final_metrics {
        println!(
            "steps={} loss={:.3e} relative_l2={:.3e} ({:.1}s)",
            m.steps, m.loss.total, m.l2_error, report.wall_time_s
        );
    }
    println!("wrote {}", out.display());
}
