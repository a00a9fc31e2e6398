use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use sclm::{run, RunConfig, RunRequest, DEFAULT_OUT_DIR};

/// Stochastic scalar conservation laws on compact manifolds.
#[derive(Parser, Debug)]
#[command(name = "sclm", version)]
struct Cli {
    /// simulate, check-flux, viscosity-sweep, contraction, isometry or entropy-audit.
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SCLM_OUT_DIR")]
    out: Option<PathBuf>,
    /// Overrides experiment.paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.paths {
        config.experiment.paths = Some(p);
    }
    let out_dir = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let manifest = run(&RunRequest {
        experiment: cli.experiment,
        config,
        out_dir: out_dir.clone(),
    })?;
    for (name, ok) in &manifest.checks {
        println!("{:<32} {}", name, if *ok { "ok" } else { "FAILED" });
    }
    println!("manifest: {}", out_dir.join("manifest.json").display());
    Ok(manifest.pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
