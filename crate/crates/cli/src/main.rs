use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfmix::Variant;
use mfmix_cli::commands::{run_check, run_simulate, run_solve, run_sweep};
use mfmix_cli::{CliError, Overrides, RunConfig};

/// Equilibria of mixed cooperative / non-cooperative mean-field models.
#[derive(Parser)]
#[command(name = "mfmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system and write solution, policy and report.
    Solve(Common),
    /// Solve, then run the finite-population Monte Carlo.
    Simulate(Common),
    /// Repeat solve (or simulate) over the configured sweep values.
    Sweep(Common),
    /// Evaluate the existence conditions only.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's "out", else ./mfmix-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Fbsde,
    Paper,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Fbsde => Variant::FbsdeConsistent,
            VariantArg::Paper => Variant::PaperLiteral,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (verb, common) = match cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Check(c) => ("check", c),
    };
    let overrides = Overrides {
        seed: common.seed,
        variant: common.variant.map(Variant::from),
        out: common.out,
    };
    let cfg = RunConfig::load(&common.config, &overrides)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mfmix-out"));
    match verb {
        "solve" => {
            let (_, s) = run_solve(&cfg, &out)?;
            println!(
                "solve: condition {:?}, max residual {:.3e}; wrote {}",
                s.condition.expect("set by solve"),
                s.max_residual.unwrap_or(f64::NAN),
                out.display()
            );
        }
        "simulate" => {
            let s = run_simulate(&cfg, &out)?;
            for (role, mean, se) in &s.costs {
                println!("simulate: {role} cost {mean:.6} +- {se:.6}");
            }
            if let Some(e) = &s.epsilon {
                println!("simulate: epsilon {:.3e} +- {:.3e} ({})", e.epsilon_clipped, e.half_width, e.argmax);
            }
        }
        "sweep" => {
            let rows = run_sweep(&cfg, &out)?;
            let ok = rows.iter().filter(|r| r.exit_code == 0).count();
            println!("sweep: {ok}/{} values succeeded; wrote {}", rows.len(), out.join("sweep_summary.csv").display());
        }
        _ => {
            let r = run_check(&cfg, &out)?;
            println!("check: {:?} (margin {:.6e} at t = {})", r.holds, r.min_margin, r.witness_time);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
