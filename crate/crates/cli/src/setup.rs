//! Turns a [`RunConfig`] into solver objects.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use sclm_core::flux::{builtin_flux, Cutoff, FluxParams, NoiseAmplitude, SeparableNoise};
use sclm_core::geometry::{build_eigenbasis, build_manifold, Chart, ChartedManifold};
use sclm_core::solver::{Problem, SolverConfig};
use sclm_core::stochastic::TimeGrid;

use crate::config::{InitialData, RunConfig};

pub struct Setup {
    pub problem: Problem,
    pub solver: SolverConfig,
    pub u0: Vec<f64>,
}

pub fn manifold(cfg: &RunConfig) -> Result<ChartedManifold> {
    Ok(build_manifold(&cfg.manifold)?)
}

/// Coordinate along which the scalar initial profiles vary.
fn periodic_coordinate(m: &ChartedManifold, x: [f64; 2]) -> f64 {
    match m.chart() {
        Chart::SphereBand { .. } => x[1],
        Chart::FlatTorus { .. } => x[0],
    }
}

/// The initial profile as a function of chart coordinates; `None` for file data.
pub fn initial_profile(
    cfg: &RunConfig,
    m: &ChartedManifold,
) -> Option<Box<dyn Fn([f64; 2]) -> f64 + Send + Sync>> {
    let sphere = matches!(m.chart(), Chart::SphereBand { .. });
    let along = move |x: [f64; 2]| if sphere { x[1] } else { x[0] };
    match cfg.initial.clone() {
        InitialData::Constant { value } => Some(Box::new(move |_| value)),
        InitialData::Sine { amplitude, wave } => Some(Box::new(move |x| {
            amplitude * (wave as f64 * along(x)).sin()
        })),
        InitialData::RiemannSmooth { left, right, width } => Some(Box::new(move |x| {
            0.5 * (left + right) + 0.5 * (right - left) * (along(x).cos() / width).tanh()
        })),
        InitialData::File { .. } => None,
    }
}

fn read_initial_file(path: &std::path::Path, nodes: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read initial data {}", path.display()))?;
    let mut values = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            // a header row
            Err(_) if line == 0 => continue,
            Err(_) => bail!(
                "{}: line {}: cannot parse {field:?}",
                path.display(),
                line + 1
            ),
        }
    }
    if values.len() != nodes {
        bail!(
            "{}: expected {nodes} values, found {}",
            path.display(),
            values.len()
        );
    }
    Ok(values)
}

pub fn initial_data(cfg: &RunConfig, m: &ChartedManifold) -> Result<Vec<f64>> {
    match &cfg.initial {
        InitialData::File { path } => read_initial_file(path, m.len()),
        _ => {
            let f = initial_profile(cfg, m).expect("closed-form profile");
            Ok(m.sample(f).to_vec())
        }
    }
}

pub fn noise(cfg: &RunConfig, m: &ChartedManifold) -> Result<Arc<dyn NoiseAmplitude>> {
    let n = &cfg.noise;
    if n.kind == "zero" || n.sigma == 0.0 {
        return Ok(Arc::new(SeparableNoise::zero(m)));
    }
    let a = n.spatial_amplitude;
    let spatial = match n.spatial.as_str() {
        "cosine" => m.sample(|x| 1.0 + a * periodic_coordinate(m, x).cos()),
        _ => m.sample(|_| 1.0),
    };
    let cutoff = if n.kind == "plateau" {
        Cutoff::Plateau { inner: n.inner }
    } else {
        Cutoff::Bump
    };
    let radius = n.radius.unwrap_or(cfg.solver.radius);
    Ok(Arc::new(SeparableNoise::new(
        n.sigma, radius, spatial, cutoff,
    )?))
}

pub fn build(cfg: &RunConfig) -> Result<Setup> {
    let m = manifold(cfg)?;
    let s = &cfg.solver;
    let basis = Arc::new(build_eigenbasis(&m, s.modes)?);
    let params = FluxParams {
        direction: cfg.flux.direction,
        amplitude: cfg.flux.amplitude,
    };
    let flux = builtin_flux(
        &m,
        cfg.flux.profile.parse()?,
        cfg.flux.field.parse()?,
        params,
    )?;
    let noise = noise(cfg, &m)?;
    let u0 = initial_data(cfg, &m)?;
    let grid = TimeGrid::from_dt(s.t_final, s.dt)?;
    let mut solver = SolverConfig::new(s.epsilon, grid, cfg.seed, s.radius);
    solver.split_step = s.split_step;
    let problem = Problem {
        manifold: Arc::new(m),
        basis,
        flux: Arc::new(flux),
        noise,
    };
    Ok(Setup {
        problem,
        solver,
        u0,
    })
}

/// The config refined `level` times: nodes doubled per axis and `dt` halved.
pub fn refined(cfg: &RunConfig, level: u32) -> RunConfig {
    let mut c = cfg.clone();
    let f = 1usize << level;
    for n in &mut c.manifold.nodes {
        *n *= f;
    }
    c.solver.dt /= f as f64;
    c
}
