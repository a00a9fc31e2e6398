//! Experiment driver: config parsing, run orchestration and artifact output.

pub mod config;
pub mod experiments;
pub mod output;
pub mod setup;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Result};

pub use config::RunConfig;
pub use output::RunManifest;

pub const DEFAULT_OUT_DIR: &str = "sclm-out";

pub struct RunRequest {
    pub experiment: String,
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

/// Runs one experiment and writes `manifest.json`, `config.json` and its artifacts
/// under `out_dir`. The manifest's `pass` is false when any check failed.
pub fn run(req: &RunRequest) -> Result<RunManifest> {
    let cfg = &req.config;
    cfg.validate()?;
    if let Some(name) = &cfg.experiment.name {
        if name != &req.experiment {
            bail!(
                "config names experiment {name:?} but {:?} was requested",
                req.experiment
            );
        }
    }
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = output::OutputDir::create(&req.out_dir)?;
    let mut report = output::Report::default();
    match req.experiment.as_str() {
        "simulate" => experiments::simulate(cfg, &mut out, &mut report)?,
        "check-flux" => experiments::check_flux(cfg, &mut out, &mut report)?,
        "viscosity-sweep" => experiments::viscosity_sweep(cfg, &mut out, &mut report)?,
        "contraction" => experiments::contraction(cfg, &mut out, &mut report)?,
        "isometry" => experiments::isometry(cfg, &mut out, &mut report)?,
        "entropy-audit" => experiments::entropy_audit_run(cfg, &mut out, &mut report)?,
        other => bail!(
            "unknown experiment {other:?}; expected one of {}",
            config::EXPERIMENTS.join(", ")
        ),
    }
    out.text("config.json", &cfg.canonical_json())?;
    let mut files = out.files().to_vec();
    files.push("manifest.json".into());
    let manifest = RunManifest {
        experiment: req.experiment.clone(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        pass: report.pass(),
        metrics: report.metrics,
        checks: report.checks,
        files,
    };
    out.json("manifest.json", &manifest)?;
    Ok(manifest)
}
