//! Spectral Galerkin scheme for `du + Div_g f(x,u) dt = Φ(x,u) dW + εΔ_g u dt`.
//!
//! The coefficients of `u_n = Σ α_j e_j` follow the SDE system
//! `dα_j = ∫⟨f(x,u_n), ∇e_j⟩ dγ dt + ελ_j α_j dt + ∫Φ(x,u_n) e_j dγ dW`,
//! integrated by Euler–Maruyama with either an explicit or an exact (split-step)
//! viscous factor.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::flux::{FluxField, NoiseAmplitude};
use crate::function_space::project;
use crate::geometry::{ChartedManifold, EigenBasis, MIN_NODES_PER_AXIS};
use crate::stats::{pairwise_sum, Estimate};
use crate::stochastic::{sample_wiener, TimeGrid, WienerPath};
use crate::{Error, Result};

/// Geometry, basis and coefficients shared by every path of an experiment.
#[derive(Clone)]
pub struct Problem {
    pub manifold: Arc<ChartedManifold>,
    pub basis: Arc<EigenBasis>,
    pub flux: Arc<dyn FluxField>,
    pub noise: Arc<dyn NoiseAmplitude>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub grid: TimeGrid,
    pub seed: u64,
    pub path_id: u64,
    /// Working interval `[−R, R]` for `u`.
    pub radius: f64,
    /// Exact viscous factor `e^{ελ dt}` instead of the explicit term.
    pub split_step: bool,
}

impl SolverConfig {
    pub fn new(epsilon: f64, grid: TimeGrid, seed: u64, radius: f64) -> Self {
        Self {
            epsilon,
            grid,
            seed,
            path_id: 0,
            radius,
            split_step: true,
        }
    }

    pub fn with_path(mut self, path_id: u64) -> Self {
        self.path_id = path_id;
        self
    }
}

/// One monitor sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Monitor {
    pub t: f64,
    /// `‖u‖_{L²}`.
    pub l2: f64,
    /// `ε ‖∇u‖²_{L²}`.
    pub grad_energy: f64,
    /// `∫_M u dγ`.
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct SolutionPath {
    pub times: Vec<f64>,
    /// `α(t_m)` for every grid time.
    pub coefficients: Vec<Array1<f64>>,
    pub wiener: WienerPath,
    pub monitors: Vec<Monitor>,
    pub epsilon: f64,
    pub warnings: Vec<String>,
}

impl SolutionPath {
    pub fn terminal(&self) -> &Array1<f64> {
        self.coefficients.last().expect("non-empty path")
    }

    /// Nodal values at step `m`.
    pub fn nodal(&self, basis: &EigenBasis, m: usize) -> Array1<f64> {
        basis.values().t().dot(&self.coefficients[m])
    }
}

/// Precomputed quadrature operators of the Galerkin system.
pub struct Galerkin {
    problem: Problem,
    config: SolverConfig,
    /// `w(x) ∂_k e_j(x)`, one matrix per axis.
    weighted_partials: Vec<Array2<f64>>,
    /// `w(x) e_j(x)`.
    weighted_values: Array2<f64>,
    /// `∫ e_j dγ`.
    mode_integrals: Array1<f64>,
    decay: Array1<f64>,
}

impl Galerkin {
    pub fn new(problem: Problem, config: SolverConfig) -> Result<Self> {
        let m = &problem.manifold;
        let b = &problem.basis;
        if !(config.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be >= 0, got {}",
                config.epsilon
            )));
        }
        if !(config.radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {}",
                config.radius
            )));
        }
        if b.values().ncols() != m.len() {
            return Err(Error::Shape {
                expected: m.len(),
                got: b.values().ncols(),
            });
        }
        let dt = config.grid.dt();
        if !config.split_step {
            let cfl = dt * config.epsilon * b.max_abs_eigenvalue();
            if cfl > 0.5 {
                return Err(Error::Stability(cfl));
            }
        }
        for axis in 0..m.dim() {
            if let Some(k) = b.max_wavenumber(axis) {
                let required = (2 * (2 * k + 1)).max(MIN_NODES_PER_AXIS);
                let nodes = m.axis(axis).nodes;
                if nodes < required {
                    return Err(Error::Dealiasing {
                        axis,
                        nodes,
                        required,
                    });
                }
            }
        }
        let w = m.weights();
        let weighted_values = b.values() * w;
        let weighted_partials = (0..m.dim()).map(|k| b.partials(k) * w).collect();
        let mode_integrals = weighted_values.sum_axis(ndarray::Axis(1));
        let decay = b
            .eigenvalues()
            .iter()
            .map(|l| (config.epsilon * l * dt).exp())
            .collect();
        Ok(Self {
            problem,
            config,
            weighted_partials,
            weighted_values,
            mode_integrals,
            decay,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn nodal(&self, alpha: &Array1<f64>) -> Array1<f64> {
        self.problem.basis.values().t().dot(alpha)
    }

    fn flux_drift(&self, u: &Array1<f64>) -> Array1<f64> {
        let flux = &self.problem.flux;
        let mut out = Array1::zeros(self.problem.basis.len());
        if flux.is_zero() {
            return out;
        }
        for (k, wp) in self.weighted_partials.iter().enumerate() {
            let fk: Array1<f64> = u
                .iter()
                .enumerate()
                .map(|(p, &v)| flux.flux(p, v)[k])
                .collect();
            out += &wp.dot(&fk);
        }
        out
    }

    /// `∫⟨f(x,u), ∇e_j⟩ dγ + ελ_j α_j`.
    pub fn drift(&self, alpha: &Array1<f64>) -> Array1<f64> {
        let mut d = self.flux_drift(&self.nodal(alpha));
        let eps = self.config.epsilon;
        for ((dj, a), l) in d
            .iter_mut()
            .zip(alpha)
            .zip(self.problem.basis.eigenvalues())
        {
            *dj += eps * l * a;
        }
        d
    }

    /// `∫Φ(x,u) e_j dγ`.
    pub fn noise(&self, alpha: &Array1<f64>) -> Array1<f64> {
        self.noise_at(&self.nodal(alpha))
    }

    fn noise_at(&self, u: &Array1<f64>) -> Array1<f64> {
        let noise = &self.problem.noise;
        if noise.is_zero() {
            return Array1::zeros(self.problem.basis.len());
        }
        let phi: Array1<f64> = u
            .iter()
            .enumerate()
            .map(|(p, &v)| noise.amplitude(p, v))
            .collect();
        self.weighted_values.dot(&phi)
    }

    fn guard(&self, step: usize, u: &Array1<f64>, warnings: &mut Vec<String>) -> Result<()> {
        let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = self.config.radius;
        if !sup.is_finite() || sup > 4.0 * r {
            return Err(Error::BlowUp {
                step,
                sup,
                limit: 4.0 * r,
            });
        }
        if sup > 2.0 * r && warnings.is_empty() {
            let msg = format!("step {step}: sup|u| = {sup:.4} exceeds 2R = {}", 2.0 * r);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(())
    }

    /// One Euler–Maruyama step driven by `dw`.
    pub fn step(&self, alpha: &Array1<f64>, dw: f64, step: usize) -> Result<Array1<f64>> {
        self.step_checked(alpha, dw, step, &mut Vec::new())
    }

    fn step_checked(
        &self,
        alpha: &Array1<f64>,
        dw: f64,
        step: usize,
        warnings: &mut Vec<String>,
    ) -> Result<Array1<f64>> {
        let u = self.nodal(alpha);
        self.guard(step, &u, warnings)?;
        let dt = self.config.grid.dt();
        let drift = self.flux_drift(&u);
        let noise = self.noise_at(&u);
        let eps = self.config.epsilon;
        let mut next = Array1::zeros(alpha.len());
        for j in 0..alpha.len() {
            let star = alpha[j] + drift[j] * dt + noise[j] * dw;
            next[j] = if self.config.split_step {
                star * self.decay[j]
            } else {
                star + eps * self.problem.basis.eigenvalues()[j] * alpha[j] * dt
            };
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                snapshot: alpha.to_vec(),
            });
        }
        Ok(next)
    }

    pub fn monitor(&self, t: f64, alpha: &Array1<f64>) -> Monitor {
        let lambda = self.problem.basis.eigenvalues();
        let sq: Vec<f64> = alpha.iter().map(|a| a * a).collect();
        let grad: Vec<f64> = alpha
            .iter()
            .zip(lambda)
            .map(|(a, l)| l.abs() * a * a)
            .collect();
        let mass: Vec<f64> = alpha
            .iter()
            .zip(&self.mode_integrals)
            .map(|(a, i)| a * i)
            .collect();
        Monitor {
            t,
            l2: pairwise_sum(&sq).sqrt(),
            grad_energy: self.config.epsilon * pairwise_sum(&grad),
            mass: pairwise_sum(&mass),
        }
    }

    /// Integrates from projected initial data along a given path.
    pub fn run_with_path(&self, alpha0: Array1<f64>, wiener: WienerPath) -> Result<SolutionPath> {
        let grid = self.config.grid;
        if wiener.grid != grid {
            return Err(Error::TimeGrid(
                "Wiener path grid differs from solver grid".into(),
            ));
        }
        let times = grid.times();
        let mut coefficients = Vec::with_capacity(grid.steps() + 1);
        let mut monitors = Vec::with_capacity(grid.steps() + 1);
        let mut warnings = Vec::new();
        monitors.push(self.monitor(times[0], &alpha0));
        coefficients.push(alpha0);
        for m in 0..grid.steps() {
            let next =
                self.step_checked(&coefficients[m], wiener.increments[m], m, &mut warnings)?;
            monitors.push(self.monitor(times[m + 1], &next));
            coefficients.push(next);
        }
        Ok(SolutionPath {
            times,
            coefficients,
            wiener,
            monitors,
            epsilon: self.config.epsilon,
            warnings,
        })
    }

    /// Projects `u0`, checks `‖u0‖_∞ ≤ R`, and integrates along path `path_id`.
    pub fn run(&self, u0: &[f64], path_id: u64) -> Result<SolutionPath> {
        let sup = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup > self.config.radius {
            return Err(Error::OutOfRange {
                value: sup,
                radius: self.config.radius,
            });
        }
        let alpha0 = project(&self.problem.manifold, &self.problem.basis, u0)?.into_coeffs();
        let wiener = sample_wiener(self.config.seed, path_id, self.config.grid);
        self.run_with_path(alpha0, wiener)
    }
}

/// Single path with the config's own `path_id`.
pub fn run_path(problem: &Problem, cfg: &SolverConfig, u0: &[f64]) -> Result<SolutionPath> {
    Galerkin::new(problem.clone(), *cfg)?.run(u0, cfg.path_id)
}

/// Paths `0..n_paths`, in path order regardless of scheduling.
pub fn run_ensemble(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &[f64],
    n_paths: usize,
) -> Result<Vec<SolutionPath>> {
    let g = Galerkin::new(problem.clone(), *cfg)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| g.run(u0, id))
        .collect()
}

pub const MIN_ENERGY_PATHS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `E[(½‖u(T)‖²)²]`.
    pub terminal_energy_sq: Estimate,
    /// `ε E[∫_0^T ‖∇u‖² dt]`, trapezoidal in time.
    pub dissipation: Estimate,
}

pub fn energy_report(paths: &[SolutionPath]) -> Result<EnergyReport> {
    if paths.len() < MIN_ENERGY_PATHS {
        return Err(Error::TooFewPaths {
            got: paths.len(),
            min: MIN_ENERGY_PATHS,
        });
    }
    let terminal: Vec<f64> = paths
        .iter()
        .map(|p| (0.5 * p.monitors.last().expect("monitors").l2.powi(2)).powi(2))
        .collect();
    let dissipation: Vec<f64> = paths
        .iter()
        .map(|p| {
            p.monitors
                .windows(2)
                .map(|w| 0.5 * (w[0].grad_energy + w[1].grad_energy) * (w[1].t - w[0].t))
                .sum()
        })
        .collect();
    Ok(EnergyReport {
        terminal_energy_sq: Estimate::from_samples(&terminal),
        dissipation: Estimate::from_samples(&dissipation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{SeparableFlux, SeparableNoise};
    use crate::geometry::build_eigenbasis;

    fn diffusion(n: usize, split: bool) -> Galerkin {
        let m = Arc::new(ChartedManifold::torus1d(32).unwrap());
        let basis = Arc::new(build_eigenbasis(&m, n).unwrap());
        let problem = Problem {
            flux: Arc::new(SeparableFlux::zero(&m)),
            noise: Arc::new(SeparableNoise::zero(&m)),
            manifold: m,
            basis,
        };
        let mut cfg = SolverConfig::new(0.1, TimeGrid::new(1.0, 100).unwrap(), 1, 2.0);
        cfg.split_step = split;
        Galerkin::new(problem, cfg).unwrap()
    }

    #[test]
    fn zero_flux_drift_is_viscous() {
        let g = diffusion(5, true);
        let alpha = Array1::from(vec![1.0, 0.5, -0.5, 0.25, 0.1]);
        let d = g.drift(&alpha);
        for (j, l) in g.problem().basis.eigenvalues().iter().enumerate() {
            assert!((d[j] - 0.1 * l * alpha[j]).abs() < 1e-15);
        }
        assert!(g.noise(&alpha).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stability_guard() {
        let m = Arc::new(ChartedManifold::torus1d(64).unwrap());
        let basis = Arc::new(build_eigenbasis(&m, 21).unwrap());
        let problem = Problem {
            flux: Arc::new(SeparableFlux::zero(&m)),
            noise: Arc::new(SeparableNoise::zero(&m)),
            manifold: m,
            basis,
        };
        let mut cfg = SolverConfig::new(1.0, TimeGrid::new(1.0, 100).unwrap(), 1, 2.0);
        cfg.split_step = false;
        assert!(matches!(
            Galerkin::new(problem.clone(), cfg),
            Err(Error::Stability(_))
        ));
        cfg.split_step = true;
        assert!(Galerkin::new(problem, cfg).is_ok());
    }

    #[test]
    fn dealiasing_guard() {
        let m = Arc::new(ChartedManifold::torus1d(16).unwrap());
        let basis = Arc::new(build_eigenbasis(&m, 9).unwrap());
        let problem = Problem {
            flux: Arc::new(SeparableFlux::zero(&m)),
            noise: Arc::new(SeparableNoise::zero(&m)),
            manifold: m,
            basis,
        };
        let cfg = SolverConfig::new(0.1, TimeGrid::new(1.0, 10).unwrap(), 1, 2.0);
        assert!(matches!(
            Galerkin::new(problem, cfg),
            Err(Error::Dealiasing { required: 18, .. })
        ));
    }

    #[test]
    fn initial_data_guard() {
        let g = diffusion(3, true);
        let u0 = vec![3.0; 32];
        assert!(matches!(g.run(&u0, 0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn explicit_viscosity_is_first_order() {
        let g = diffusion(3, false);
        let alpha = Array1::from(vec![0.0, 1.0, 0.0]);
        let next = g.step(&alpha, 0.0, 0).unwrap();
        assert!((next[1] - (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }
}
