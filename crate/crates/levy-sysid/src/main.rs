//! `levy-sysid`: simulate Lévy-driven ARMA records and run the three-stage
//! identification pipeline or a Monte Carlo replication study.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use levy_sysid::config::ExperimentConfig;
use levy_sysid::error::{Error, Result};
use levy_sysid::monte_carlo::{emit_mc_report, run_monte_carlo};
use levy_sysid::pipeline::run_pipeline;
use levy_sysid::report::write_file;

#[derive(Parser)]
#[command(name = "levy-sysid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir` (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replications.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the number of replications.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one record and run the three-stage pipeline.
    Run(CommonArgs),
    /// Run the full Monte Carlo replication study.
    Mc(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(r) = args.replications {
        config.replications = r;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out_dir))
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let (config, out_dir) = load_config(args)?;
    let report = run_pipeline(&config)?;
    let json = serde_json::to_string_pretty(&report)?;
    let path = write_file(&out_dir, "pipeline_report.json", &json)?;
    println!("pipeline report written to {}", path.display());
    println!(
        "pe: theta = {:?}, converged = {}",
        report.pe.theta_hat.theta(),
        report.pe.converged
    );
    println!(
        "ecf: eta = {:?}, converged = {}",
        report.ecf.eta_hat, report.ecf.converged
    );
    println!(
        "stage3: theta = {:?}, kappa = {:.6}, converged = {}",
        report.stage3.theta_hat2.theta(),
        report.stage3.kappa,
        report.stage3.converged
    );
    Ok(())
}

fn cmd_mc(args: &CommonArgs) -> Result<()> {
    let (config, out_dir) = load_config(args)?;
    let report = run_monte_carlo(&config, args.threads)?;
    let (json_path, csv_path) = emit_mc_report(&report, &out_dir)?;
    println!(
        "monte carlo report written to {} and {}",
        json_path.display(),
        csv_path.display()
    );
    println!(
        "{} of {} replications succeeded",
        report.n_success, report.n_total
    );
    println!("empirical/theory diagonal ratios:");
    println!("  pe     vs sigma_p:      {:?}", report.ratios.pe_vs_sigma_p);
    println!(
        "  eta    vs (G*C^-1G)^-1: {:?}",
        report.ratios.eta_vs_avar_optimal
    );
    println!(
        "  stage3 vs kappa^-1 R^-1: {:?}",
        report.ratios.stage3_vs_avar_stage3
    );
    println!(
        "  stage3/pe empirical variance: {:?}",
        report.ratios.stage3_vs_pe_empirical
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Mc(args) => cmd_mc(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(Error::exit_code(&err) as u8)
        }
    }
}
