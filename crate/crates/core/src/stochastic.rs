//! Brownian increments, Itô sums and their Monte Carlo checks.
//!
//! Increments come from a counter-based generator: ChaCha20 keyed by the run seed,
//! with the path id as the stream and the fine step index as the word position. The
//! `m`-th Gaussian of a path is therefore fixed by `(seed, path, m)` alone, however
//! many threads draw paths and in whatever order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::stats::Estimate;
use crate::{Error, Result};

/// Uniform time grid `t_m = m T / steps` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::TimeGrid(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        if steps == 0 {
            return Err(Error::TimeGrid("need at least one step".into()));
        }
        Ok(Self { final_time, steps })
    }

    /// Grid with step `dt`; `T / dt` must be an integer up to rounding.
    pub fn from_dt(final_time: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::TimeGrid(format!("dt must be positive, got {dt}")));
        }
        let steps = (final_time / dt).round();
        if steps < 1.0 || (steps * dt - final_time).abs() > 1e-9 * final_time.max(1.0) {
            return Err(Error::TimeGrid(format!(
                "T = {final_time} is not a multiple of dt = {dt}"
            )));
        }
        Self::new(final_time, steps as usize)
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.final_time * m as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| self.time(m)).collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential standard normals of one path; `skip_to(m)` jumps to draw `m`.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl GaussianStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(path);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    pub fn skip_to(&mut self, m: u64) {
        self.rng.set_word_pos(2 * m as u128);
    }

    pub fn next_normal(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        self.normal.inverse_cdf(u)
    }
}

/// A sampled Brownian path on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub path_id: u64,
    pub grid: TimeGrid,
    /// `ΔW_m = W(t_{m+1}) − W(t_m)`, length `steps`.
    pub increments: Vec<f64>,
    /// `W(t_m)`, length `steps + 1`, starting at 0.
    pub cumulative: Vec<f64>,
}

impl WienerPath {
    pub fn from_increments(seed: u64, path_id: u64, grid: TimeGrid, increments: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        let mut w = 0.0;
        cumulative.push(w);
        for dw in &increments {
            w += dw;
            cumulative.push(w);
        }
        // store increments as differences of the stored sums so that
        // W(t_{m+1}) − W(t_m) reproduces ΔW_m bit for bit
        let increments = cumulative.windows(2).map(|c| c[1] - c[0]).collect();
        Self {
            seed,
            path_id,
            grid,
            increments,
            cumulative,
        }
    }

    pub fn terminal(&self) -> f64 {
        *self.cumulative.last().expect("non-empty path")
    }
}

/// A Brownian path fixed at a fine resolution; coarser grids see summed increments,
/// so all resolutions share one underlying sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrownianSource {
    pub seed: u64,
    pub path_id: u64,
    pub fine: TimeGrid,
}

impl BrownianSource {
    pub fn new(seed: u64, path_id: u64, fine: TimeGrid) -> Self {
        Self {
            seed,
            path_id,
            fine,
        }
    }

    pub fn path_on(&self, grid: TimeGrid) -> Result<WienerPath> {
        if (grid.final_time() - self.fine.final_time()).abs() > 1e-12 * self.fine.final_time() {
            return Err(Error::TimeGrid("coarse and fine horizons differ".into()));
        }
        if self.fine.steps() % grid.steps() != 0 {
            return Err(Error::TimeGrid(format!(
                "{} fine steps do not refine {} steps",
                self.fine.steps(),
                grid.steps()
            )));
        }
        let ratio = self.fine.steps() / grid.steps();
        let scale = self.fine.dt().sqrt();
        let mut stream = GaussianStream::new(self.seed, self.path_id);
        let increments = (0..grid.steps())
            .map(|_| (0..ratio).map(|_| scale * stream.next_normal()).sum())
            .collect();
        Ok(WienerPath::from_increments(
            self.seed,
            self.path_id,
            grid,
            increments,
        ))
    }
}

/// Path `path_id` of the ensemble identified by `seed`.
pub fn sample_wiener(seed: u64, path_id: u64, grid: TimeGrid) -> WienerPath {
    BrownianSource::new(seed, path_id, grid)
        .path_on(grid)
        .expect("identical grids")
}

/// Left-point sum `Σ_m X(t_m) ΔW_m`; `integrand` holds one value per step.
pub fn ito_integral(integrand: &[f64], path: &WienerPath) -> Result<f64> {
    if integrand.len() != path.increments.len() {
        return Err(Error::Shape {
            expected: path.increments.len(),
            got: integrand.len(),
        });
    }
    Ok(integrand
        .iter()
        .zip(&path.increments)
        .map(|(x, dw)| x * dw)
        .sum())
}

/// Monte Carlo comparison of `E[(∫X dW)²]` against `E[∫X² dt]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct IsometryReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Allowance for time-discretisation bias, `O(dt)`.
    pub bias_tolerance: f64,
    pub pass: bool,
}

pub const MIN_ISOMETRY_PATHS: usize = 100;

/// Runs `generator` on `n_paths` independent Wiener paths; it must return the
/// adapted integrand at the left point of each step.
pub fn verify_ito_isometry<G>(
    generator: G,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<IsometryReport>
where
    G: Fn(&WienerPath) -> Vec<f64> + Sync,
{
    if n_paths < MIN_ISOMETRY_PATHS {
        return Err(Error::TooFewPaths {
            got: n_paths,
            min: MIN_ISOMETRY_PATHS,
        });
    }
    let dt = grid.dt();
    let samples: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let path = sample_wiener(seed, id, grid);
            let x = generator(&path);
            let i = ito_integral(&x, &path)?;
            let q: f64 = x.iter().map(|v| v * v * dt).sum();
            Ok((i * i, q))
        })
        .collect::<Result<_>>()?;
    let lhs = Estimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let rhs = Estimate::from_samples(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
    let bias_tolerance = dt;
    let pass = (lhs.mean - rhs.mean).abs() <= 4.0 * (lhs.stderr + rhs.stderr) + bias_tolerance;
    Ok(IsometryReport {
        lhs,
        rhs,
        bias_tolerance,
        pass,
    })
}

/// Discrete residual of `d(XY) = X dY + Y dX + σ_X σ_Y dt` along one path.
///
/// `x` and `y` hold `steps + 1` samples; `sigma_x`, `sigma_y` the diffusion
/// coefficients at the left point of each step.
pub fn product_rule_residual(
    x: &[f64],
    y: &[f64],
    sigma_x: &[f64],
    sigma_y: &[f64],
    grid: TimeGrid,
) -> Result<f64> {
    let n = grid.steps();
    for (v, len) in [(x, n + 1), (y, n + 1), (sigma_x, n), (sigma_y, n)] {
        if v.len() != len {
            return Err(Error::Shape {
                expected: len,
                got: v.len(),
            });
        }
    }
    let dt = grid.dt();
    let mut acc = 0.0;
    for m in 0..n {
        let dx = x[m + 1] - x[m];
        let dy = y[m + 1] - y[m];
        acc += x[m] * dy + y[m] * dx + sigma_x[m] * sigma_y[m] * dt;
    }
    Ok(x[n] * y[n] - x[0] * y[0] - acc)
}
