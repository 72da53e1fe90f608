use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmsweep_cli::studies::{cmd_convergence, cmd_run, cmd_stability};
use vmsweep_cli::verify::cmd_verify;
use vmsweep_cli::{load_config, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "vmsweep", version, about = "Projection time stepping for Kelvin-Voigt perfect plasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory; writes norms.csv and VTK snapshots.
    Run(Common),
    /// Sweep the time step; writes stability.csv and stability_slopes.csv.
    Stability(Common),
    /// Self-convergence against a fine reference; writes convergence.csv.
    Convergence(Common),
    /// Run the property suites; exit status 1 if any fails.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let cfg = load_config(&self.config)?;
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

fn execute(command: &Command) -> Result<bool, CliError> {
    match command {
        Command::Run(a) => {
            let cfg = a.load()?;
            let s = cmd_run(&cfg, &a.out)?;
            println!(
                "{} steps ({}), min yield slack {:e}, {} snapshots",
                s.steps, cfg.scheme, s.min_yield_slack, s.snapshots
            );
            if !s.flagged_steps.is_empty() {
                println!("fixed point hit its cap at {} steps: {:?}", s.flagged_steps.len(), s.flagged_steps);
            }
            report_out(&a.out);
            Ok(true)
        }
        Command::Stability(a) => {
            let cfg = a.load()?;
            let r = cmd_stability(&cfg, &a.out)?;
            println!("korn constant {:e}", r.korn);
            for row in &r.rows {
                println!(
                    "N {:>6}  linf_h_v {:e}  linf_h_sigma {:e}  energy {}",
                    row.n_steps,
                    row.norms.linf_h_v,
                    row.norms.linf_h_sigma,
                    if row.energy_ok { "ok" } else { "VIOLATED" }
                );
            }
            report_out(&a.out);
            Ok(true)
        }
        Command::Convergence(a) => {
            let cfg = a.load()?;
            let r = cmd_convergence(&cfg, &a.out)?;
            for row in &r.rows {
                println!(
                    "N {:>6}  err_sigma {:e}  err_v {:e}  err_v_l2v {:e}",
                    row.n_steps, row.err_sigma_linf_h, row.err_v_linf_h, row.err_v_l2_v
                );
            }
            report_out(&a.out);
            Ok(true)
        }
        Command::Verify(a) => {
            let cfg = a.load()?;
            let r = cmd_verify(&cfg.raw.verify, cfg.seed(), &a.out)?;
            println!("{}", if r.passed() { "all gating suites passed" } else { "verification FAILED" });
            Ok(r.passed())
        }
    }
}

fn report_out(out: &Path) {
    println!("wrote {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
