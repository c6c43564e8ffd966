use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pgkit_cli::{cmd_bench, cmd_oracle, cmd_run, cmd_simulate, seed_override, CliError, RawConfig};

/// Particle Gibbs samplers for nonlinear state-space models.
#[derive(Parser)]
#[command(name = "pgkit", version)]
struct Cli {
    /// Worker threads for ipmcmc and blocked_pg (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a `t,x,y` dataset from the configured model at `truth`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sampler on a dataset and write traces and diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time a matrix of (sampler, M, N) cells; `sampler`, `M` and `N` take comma lists.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Data to run on; simulated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Kalman filter and smoother for a linear-Gaussian config.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &Path) -> Result<RawConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    if let Some(seed) = seed_override(std::env::var("PGKIT_SEED").ok().as_deref())? {
        raw.set("seed", seed.to_string());
    }
    Ok(raw)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = read_config(&config)?.to_run_config(false)?;
            println!("{}", cmd_simulate(&cfg, &out)?);
        }
        Command::Run { config, data, out_dir } => {
            let cfg = read_config(&config)?.to_run_config(true)?;
            if verbose {
                eprintln!("running {} N={} M={} seed={}", cfg.sampler, cfg.num_particles, cfg.iterations, cfg.seed);
            }
            let report = cmd_run(&cfg, &data, &out_dir, cli.threads)?;
            println!("{}", serde_json::to_string_pretty(&report.summary).unwrap_or_default());
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bench { config, data, out } => {
            let raw = read_config(&config)?;
            let report = cmd_bench(&raw, data.as_deref(), &out, cli.threads, |row| {
                if verbose {
                    match row.wall_seconds {
                        Some(s) => eprintln!("{} M={} N={}: {s:.3} s", row.sampler, row.iterations, row.num_particles),
                        None => eprintln!(
                            "{} M={} N={}: failed: {}",
                            row.sampler,
                            row.iterations,
                            row.num_particles,
                            row.error.as_deref().unwrap_or("")
                        ),
                    }
                }
            })?;
            let failed = report.rows.iter().filter(|r| r.wall_seconds.is_none()).count();
            println!("wrote {} ({} cells, {failed} failed)", out.display(), report.rows.len());
        }
        Command::Oracle { config, data, out } => {
            let cfg = read_config(&config)?.to_run_config(false)?;
            let k = cmd_oracle(&cfg, &data, &out)?;
            println!("log_likelihood = {}", k.log_likelihood);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
