use clap::{Args, Parser, Subcommand};
use spectral_vi_cli::config::RunConfig;
use spectral_vi_cli::{cmd_integrate, cmd_stability, cmd_sweep_h, cmd_sweep_n, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Spectral variational integrators: single runs, refinement sweeps and
/// long-run stability studies.
#[derive(Parser)]
#[command(name = "spectral-vi", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory and write its diagnostics.
    Integrate(Common),
    /// Repeat a run over the values of n in `sweep.n` at fixed h.
    SweepN(Common),
    /// Repeat a run over the step sizes in `sweep.h` at fixed total time.
    SweepH(Common),
    /// Long run with energy and Noether series; N-body runs also dump orbits.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_path` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Reserved; every computation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Cmd::Integrate(c) | Cmd::SweepN(c) | Cmd::SweepH(c) | Cmd::Stability(c)) = &cli.command;
    let _ = c.seed;
    if let Some(n) = c.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    let result = RunConfig::load(&c.config).and_then(|cfg| {
        let out = c.out.as_deref();
        match &cli.command {
            Cmd::Integrate(_) => cmd_integrate(cfg, out),
            Cmd::SweepN(_) => cmd_sweep_n(cfg, out),
            Cmd::SweepH(_) => cmd_sweep_h(cfg, out),
            Cmd::Stability(_) => cmd_stability(cfg, out),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spectral-vi: {e}");
            ExitCode::from(CliError::exit_code(&e))
        }
    }
}
