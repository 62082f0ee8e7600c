use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nematic::config::RunConfig;
use nematic::par::Rayon;
use nematic::run::{self, RunDir};
use nematic::RunError;

#[derive(Debug, Parser)]
#[command(name = "nematic", version, about = "Nematic colloid laboratory: relaxation, defect extraction, limit energy, recovery fields")]
struct Cli {
    /// Run configuration (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding output.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, overriding the config (0 for all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed of the extraction perturbation, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gradient flow from the far field; writes a checkpoint and the energy trace.
    Relax,
    /// Defect lines, defect surface and the region F of a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Limit energy of the geometry in the recovery section.
    E0,
    /// Optimal half-line profile for the boundary angle theta (radians).
    Profile {
        #[arg(long)]
        theta: f64,
    },
    /// Recovery fields along regime.etas and their energy ratios.
    Recover,
    /// The acceptance suite.
    Validate {
        /// Criteria to run (all when empty).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn execute(cli: Cli) -> Result<bool, RunError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.extraction.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.directory = o.clone();
    }
    let exec = Rayon::new(cfg.threads)?;
    let out = RunDir { path: cfg.output.directory.clone() };
    match cli.command {
        Command::Relax => {
            let s = run::cmd_relax(&cfg, &out, &exec)?;
            println!("relax: {} iterations, converged {}, E {:.6e}, |grad| {:.3e}", s.iterations, s.converged, s.final_total, s.final_grad_norm);
        }
        Command::Extract { checkpoint } => {
            let s = run::cmd_extract(&cfg, &checkpoint, &out, &exec)?;
            println!("extract: M(S) {:.6}, M(T in fluid) {:.6}, E0 {:.6}", s.s_length, s.t_area, s.e0.total);
        }
        Command::E0 => {
            let b = run::cmd_e0(&cfg, &out)?;
            println!("e0: total {:.6} (surface {:.6}, G {:.6}, line {:.6}, bulk T {:.6})", b.total, b.term_surface_base, b.term_g, b.term_line, b.term_bulk_t);
        }
        Command::Profile { theta } => {
            let iv = run::cmd_profile(&cfg, theta, &out)?;
            println!("profile: I {:.10} (closed form {:.10}, rel err {:.2e})", iv.i_bvp, iv.i_closed_form, iv.rel_err);
        }
        Command::Recover => {
            let ratios = run::cmd_recover(&cfg, &out, &exec)?;
            println!("recover: ratios {ratios:?}");
        }
        Command::Validate { only } => {
            let results = run::cmd_validate(&only, &out, &exec)?;
            for r in &results {
                println!("{}", r.line());
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("nematic: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
