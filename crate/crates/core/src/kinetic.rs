//! Kinetic diagnostics: `h = sign₊(u − ξ)`, entropy defects, weak-form estimates of
//! the kinetic measure `m(t, x, ξ)` and the paired-noise L¹ contraction experiment.

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::flux::FluxField;
use crate::geometry::ChartedManifold;
use crate::solver::{Galerkin, Problem, SolutionPath, SolverConfig};
use crate::stats::{log_log_slope, pairwise_sum, Estimate};
use crate::{Error, Result};

pub const DEFAULT_XI_CELLS: usize = 128;

/// Cell-centred `ξ` nodes over `[−R, R]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XiGrid {
    pub radius: f64,
    pub cells: usize,
}

impl XiGrid {
    pub fn new(radius: f64, cells: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "xi radius must be positive, got {radius}"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 xi cells, got {cells}"
            )));
        }
        Ok(Self { radius, cells })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.node(i)).collect()
    }

    /// `[a_i, b_i]` of cell `i`.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let a = -self.radius + i as f64 * self.spacing();
        (a, a + self.spacing())
    }

    /// Number of nodes strictly below `v`.
    fn count_below(&self, v: f64) -> usize {
        let k = ((v + self.radius) / self.spacing() - 0.5).ceil();
        let k = k.clamp(0.0, self.cells as f64) as usize;
        // the closed form can be off by one when v sits on a node
        let mut k = k;
        while k > 0 && self.node(k - 1) >= v {
            k -= 1;
        }
        while k < self.cells && self.node(k) < v {
            k += 1;
        }
        k
    }
}

/// One time slice of `h(x, ξ) = 1_{ξ < u(x)}` on the grid nodes × [`XiGrid`].
///
/// Stored per node as the count of `ξ` nodes below `u`, which makes `h` monotone in
/// `ξ` by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct KineticFunction {
    grid: XiGrid,
    cuts: Vec<usize>,
}

pub fn kinetic_function(u: &[f64], grid: XiGrid) -> Result<KineticFunction> {
    let mut cuts = Vec::with_capacity(u.len());
    for &v in u {
        if !(v.abs() < grid.radius) {
            return Err(Error::OutOfRange {
                value: v,
                radius: grid.radius,
            });
        }
        cuts.push(grid.count_below(v));
    }
    Ok(KineticFunction { grid, cuts })
}

impl KineticFunction {
    pub fn grid(&self) -> XiGrid {
        self.grid
    }

    pub fn nodes(&self) -> usize {
        self.cuts.len()
    }

    pub fn cut(&self, node: usize) -> usize {
        self.cuts[node]
    }

    pub fn value(&self, node: usize, i: usize) -> f64 {
        if i < self.cuts[node] {
            1.0
        } else {
            0.0
        }
    }

    /// `h̄ = 1 − h`.
    pub fn conjugate(&self, node: usize, i: usize) -> f64 {
        1.0 - self.value(node, i)
    }

    /// `∫ (h − 1_{ξ<0}) dξ`, which reproduces `u(x)` within `δξ`.
    pub fn layer_cake(&self, node: usize) -> f64 {
        let zero = self.grid.count_below(0.0) as f64;
        (self.cuts[node] as f64 - zero) * self.grid.spacing()
    }

    /// `ν = −Δ_ξ h` with `h = 1` below the grid and `0` above; `cells + 1` entries.
    pub fn young_measure(&self, node: usize) -> Vec<f64> {
        let n = self.grid.cells;
        let h = |i: isize| -> f64 {
            if i < 0 {
                1.0
            } else if i as usize >= n {
                0.0
            } else {
                self.value(node, i as usize)
            }
        };
        (0..=n as isize).map(|i| h(i - 1) - h(i)).collect()
    }

    /// Pointwise mean of several slices, an `[0, 1]`-valued kinetic object.
    pub fn average(slices: &[KineticFunction]) -> Result<Vec<Vec<f64>>> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("no slices".into()))?;
        let n = first.grid.cells;
        let mut out = vec![vec![0.0; n]; first.nodes()];
        for s in slices {
            if s.grid != first.grid || s.nodes() != first.nodes() {
                return Err(Error::Mismatch("kinetic slices on different grids".into()));
            }
            for (p, row) in out.iter_mut().enumerate() {
                for v in row.iter_mut().take(s.cuts[p]) {
                    *v += 1.0;
                }
            }
        }
        let k = slices.len() as f64;
        for row in &mut out {
            for v in row.iter_mut() {
                *v /= k;
            }
        }
        Ok(out)
    }
}

/// `∫_M ∫ h¹ h̄² dξ dγ`, which equals `∫ (u₁ − u₂)₊ dγ` up to `δξ`.
pub fn kinetic_pairing(
    manifold: &ChartedManifold,
    h1: &KineticFunction,
    h2: &KineticFunction,
) -> Result<f64> {
    if h1.grid != h2.grid || h1.nodes() != manifold.len() || h2.nodes() != manifold.len() {
        return Err(Error::Mismatch(
            "kinetic functions on different grids".into(),
        ));
    }
    let dxi = h1.grid.spacing();
    Ok(manifold
        .weights()
        .iter()
        .zip(h1.cuts.iter().zip(&h2.cuts))
        .map(|(w, (a, b))| w * dxi * a.saturating_sub(*b) as f64)
        .sum())
}

/// `D = ∫∫ h¹h̄² + ∫∫ h²h̄¹`, the kinetic form of `‖u₁ − u₂‖_{L¹}`.
pub fn kinetic_distance(
    manifold: &ChartedManifold,
    h1: &KineticFunction,
    h2: &KineticFunction,
) -> Result<f64> {
    Ok(kinetic_pairing(manifold, h1, h2)? + kinetic_pairing(manifold, h2, h1)?)
}

/// A `C²` entropy `θ`.
pub trait Entropy: Sync {
    fn value(&self, z: f64) -> f64;
    fn first(&self, z: f64) -> f64;
    fn second(&self, z: f64) -> f64;
}

/// `θ(z) = z`.
pub struct LinearEntropy;

impl Entropy for LinearEntropy {
    fn value(&self, z: f64) -> f64 {
        z
    }
    fn first(&self, _: f64) -> f64 {
        1.0
    }
    fn second(&self, _: f64) -> f64 {
        0.0
    }
}

/// `θ(z) = z²`.
pub struct QuadraticEntropy;

impl Entropy for QuadraticEntropy {
    fn value(&self, z: f64) -> f64 {
        z * z
    }
    fn first(&self, z: f64) -> f64 {
        2.0 * z
    }
    fn second(&self, _: f64) -> f64 {
        2.0
    }
}

/// `θ″ = 1_{[a,b]}`, `θ′(z) = clamp(z − a, 0, b − a)`, `θ = ∫_{-∞}^z θ′`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellEntropy {
    pub a: f64,
    pub b: f64,
}

impl Entropy for CellEntropy {
    fn value(&self, z: f64) -> f64 {
        let w = self.b - self.a;
        if z <= self.a {
            0.0
        } else if z <= self.b {
            0.5 * (z - self.a).powi(2)
        } else {
            0.5 * w * w + w * (z - self.b)
        }
    }
    fn first(&self, z: f64) -> f64 {
        (z - self.a).clamp(0.0, self.b - self.a)
    }
    fn second(&self, z: f64) -> f64 {
        if z >= self.a && z < self.b {
            1.0
        } else {
            0.0
        }
    }
}

impl CellEntropy {
    /// `Q(x, u) = ∫_{-∞}^u θ′(ξ) ∂_ξ f(x, ξ) dξ`, in closed form through `f` and its
    /// primitive in `ξ`.
    pub fn flux(&self, flux: &dyn FluxField, node: usize, u: f64) -> [f64; 2] {
        if u <= self.a {
            return [0.0, 0.0];
        }
        let f = flux.flux(node, u);
        let top = flux.primitive(node, u.min(self.b));
        let bottom = flux.primitive(node, self.a);
        let t = self.first(u);
        [
            t * f[0] - (top[0] - bottom[0]),
            t * f[1] - (top[1] - bottom[1]),
        ]
    }
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// `Q_θ(x, u) = ∫_0^u θ′(v) a(x, v) dv` by 8-point Gauss–Legendre.
pub fn entropy_flux(theta: &dyn Entropy, flux: &dyn FluxField, node: usize, u: f64) -> [f64; 2] {
    let half = 0.5 * u;
    let mut q = [0.0; 2];
    for (x, w) in GAUSS8 {
        let v = half * (1.0 + x);
        let a = flux.speed(node, v);
        let t = theta.first(v);
        q[0] += w * t * a[0];
        q[1] += w * t * a[1];
    }
    [q[0] * half, q[1] * half]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyDefect {
    pub times: Vec<f64>,
    /// `μ_θ(t_m)`, one value per step.
    pub defects: Vec<f64>,
    pub running_min: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl EntropyDefect {
    pub fn minimum(&self) -> f64 {
        self.running_min.last().copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Per-step defect of the discrete entropy balance
/// `dθ(u) = (−Div Q_θ + εΔθ(u) + ½Φ²θ″(u)) dt + Φθ′(u) dW − dμ_θ`, integrated over M.
pub fn entropy_defect(
    problem: &Problem,
    path: &SolutionPath,
    theta: &dyn Entropy,
) -> Result<EntropyDefect> {
    let m = &problem.manifold;
    let steps = path.coefficients.len() - 1;
    let dt = path.wiener.grid.dt();
    let eps = path.epsilon;
    let nodal: Vec<Array1<f64>> = (0..=steps).map(|k| path.nodal(&problem.basis, k)).collect();
    let entropy_mass: Vec<f64> = nodal
        .iter()
        .map(|u| {
            let t: Vec<f64> = u.iter().map(|&v| theta.value(v)).collect();
            m.integrate(&t)
        })
        .collect();

    let defects: Vec<f64> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let u = &nodal[k];
            let mut rate = 0.0;
            if !problem.flux.is_zero() {
                let q: Vec<[f64; 2]> = u
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| entropy_flux(theta, problem.flux.as_ref(), p, v))
                    .collect();
                let comps: Vec<Array1<f64>> = (0..m.dim())
                    .map(|c| q.iter().map(|qp| qp[c]).collect())
                    .collect();
                rate -= m.integrate(m.divergence(&comps)?.as_slice().expect("contiguous"));
            }
            if eps > 0.0 {
                let t: Vec<f64> = u.iter().map(|&v| theta.value(v)).collect();
                rate += eps * m.integrate(m.laplace_beltrami(&t)?.as_slice().expect("contiguous"));
            }
            let mut stoch = 0.0;
            if !problem.noise.is_zero() {
                let ito: Vec<f64> = u
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| 0.5 * problem.noise.amplitude(p, v).powi(2) * theta.second(v))
                    .collect();
                rate += m.integrate(&ito);
                let mart: Vec<f64> = u
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| problem.noise.amplitude(p, v) * theta.first(v))
                    .collect();
                stoch = m.integrate(&mart) * path.wiener.increments[k];
            }
            let mu = rate * dt + stoch - (entropy_mass[k + 1] - entropy_mass[k]);
            if !mu.is_finite() {
                return Err(Error::NonFinite {
                    step: k,
                    snapshot: path.coefficients[k].to_vec(),
                });
            }
            Ok(mu)
        })
        .collect::<Result<_>>()?;

    let mut running_min = Vec::with_capacity(steps);
    let mut cumulative = Vec::with_capacity(steps);
    let (mut lo, mut acc) = (f64::INFINITY, 0.0);
    for &d in &defects {
        lo = lo.min(d);
        acc += d;
        running_min.push(lo);
        cumulative.push(acc);
    }
    Ok(EntropyDefect {
        times: path.times[1..].to_vec(),
        defects,
        running_min,
        cumulative,
    })
}

pub const AUDIT_MIN_EXPONENT: f64 = 0.5;

/// Negative part of the convex-entropy defect across a `(dt, h)` refinement ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyAudit {
    pub dts: Vec<f64>,
    pub spacings: Vec<f64>,
    /// Path mean of `max(0, −min_m μ_θ(t_m))`, the observed tolerance per level.
    pub negative_parts: Vec<f64>,
    /// Path mean of `Σ_m μ_θ(t_m)`.
    pub totals: Vec<f64>,
    /// Fitted exponent of the negative part in `dt`, when two or more levels are
    /// negative.
    pub exponent: Option<f64>,
    pub pass: bool,
}

/// Runs `n_paths` paths per ladder level from `u0` and tracks the convex-entropy
/// defect. Passes when the finest level shows no negative defect or the negative
/// part shrinks at least like `dt^{1/2}`, and the finest cumulative defect is
/// positive.
pub fn entropy_audit(
    levels: &[(Problem, SolverConfig)],
    u0: impl Fn([f64; 2]) -> f64 + Sync,
    theta: &dyn Entropy,
    n_paths: usize,
) -> Result<EntropyAudit> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument(
            "audit needs at least 2 refinement levels".into(),
        ));
    }
    if n_paths == 0 {
        return Err(Error::TooFewPaths { got: 0, min: 1 });
    }
    let mut out = EntropyAudit {
        dts: Vec::new(),
        spacings: Vec::new(),
        negative_parts: Vec::new(),
        totals: Vec::new(),
        exponent: None,
        pass: false,
    };
    for (problem, cfg) in levels {
        let g = Galerkin::new(problem.clone(), *cfg)?;
        let u = problem.manifold.sample(&u0);
        let per_path: Vec<(f64, f64)> = (0..n_paths as u64)
            .into_par_iter()
            .map(|id| {
                let path = g.run(u.as_slice().expect("contiguous"), id)?;
                let d = entropy_defect(problem, &path, theta)?;
                Ok(((-d.minimum()).max(0.0), d.total()))
            })
            .collect::<Result<_>>()?;
        let neg: Vec<f64> = per_path.iter().map(|p| p.0).collect();
        let tot: Vec<f64> = per_path.iter().map(|p| p.1).collect();
        out.dts.push(cfg.grid.dt());
        out.spacings.push(problem.manifold.spacing());
        out.negative_parts.push(pairwise_sum(&neg) / n_paths as f64);
        out.totals.push(pairwise_sum(&tot) / n_paths as f64);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = out
        .dts
        .iter()
        .zip(&out.negative_parts)
        .filter(|(_, &n)| n > 0.0)
        .map(|(&d, &n)| (d, n))
        .unzip();
    if xs.len() >= 2 {
        out.exponent = Some(log_log_slope(&xs, &ys));
    }
    let finest_neg = *out.negative_parts.last().expect("levels");
    let finest_total = *out.totals.last().expect("levels");
    let shrinking = finest_neg == 0.0 || out.exponent.is_some_and(|p| p >= AUDIT_MIN_EXPONENT);
    out.pass = shrinking && finest_total > 0.0;
    Ok(out)
}

/// Smooth partition of unity on one axis: `cos²` bumps centred at uniformly spaced
/// points. Periodic axes use `count` bumps around the circle; bounded axes place the
/// first and last centres on the edges.
#[derive(Clone, Debug)]
struct AxisPatches {
    centres: Vec<f64>,
    half_width: f64,
    period: Option<f64>,
}

impl AxisPatches {
    fn new(start: f64, length: f64, count: usize, periodic: bool) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 patches per axis, got {count}"
            )));
        }
        let (h, period) = if periodic {
            (length / count as f64, Some(length))
        } else {
            (length / (count - 1) as f64, None)
        };
        Ok(Self {
            centres: (0..count).map(|i| start + i as f64 * h).collect(),
            half_width: h,
            period,
        })
    }

    /// `(φ, φ′)` of patch `i` at `x`.
    fn eval(&self, i: usize, x: f64) -> (f64, f64) {
        let mut d = x - self.centres[i];
        if let Some(l) = self.period {
            d -= l * (d / l).round();
        }
        let h = self.half_width;
        if d.abs() >= h {
            return (0.0, 0.0);
        }
        let s = 0.5 * std::f64::consts::PI * d / h;
        (
            s.cos().powi(2),
            -(0.5 * std::f64::consts::PI / h) * (2.0 * s).sin(),
        )
    }
}

/// Weak-form test functions `1_block(t) φ_P(x) θ″_c(ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestBank {
    /// Spatial patches per axis.
    pub patches: [usize; 2],
    /// Time steps per block.
    pub block_steps: usize,
    /// `ξ` cells of the estimate.
    pub xi: XiGrid,
}

/// Cellwise estimate of `m` on blocks × patches × ξ-cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KineticDefect {
    pub blocks: usize,
    pub patches: usize,
    pub cells: usize,
    /// Coefficients `μ[(b, P, c)]` of `m ≈ Σ μ φ_P ⊗ 1_c ⊗ 1_b` normalised so that
    /// `μ ∫φ_P dγ` is the mass of `m` on the support of the test function.
    pub values: Vec<f64>,
    /// Weak residuals `r = −∫∫∫ m φ_P θ″_c`.
    pub residuals: Vec<f64>,
    pub condition_number: f64,
    /// `‖m‖₁`.
    pub total_mass: f64,
    /// Mass of `m₋`.
    pub negative_mass: f64,
    pub negative_fraction: f64,
    /// `Σ |Δ ∫θ_c(u) φ_P|` over the bank, the size of the time-derivative term.
    pub time_scale: f64,
    /// `‖m‖₁ / time_scale`.
    pub relative_mass: f64,
    /// `(block end time, ∫∫∫_block m)`.
    pub time_profile: Vec<(f64, f64)>,
}

impl KineticDefect {
    pub fn index(&self, block: usize, patch: usize, cell: usize) -> usize {
        (block * self.patches + patch) * self.cells + cell
    }
}

pub const MAX_BANK_CONDITION: f64 = 1e8;

pub fn estimate_kinetic_measure(
    problem: &Problem,
    path: &SolutionPath,
    bank: &TestBank,
) -> Result<KineticDefect> {
    let m = &problem.manifold;
    let d = m.dim();
    let steps = path.coefficients.len() - 1;
    if bank.block_steps == 0 || steps % bank.block_steps != 0 {
        return Err(Error::InvalidArgument(format!(
            "block of {} steps does not divide {steps} steps",
            bank.block_steps
        )));
    }
    let blocks = steps / bank.block_steps;
    let cells = bank.xi.cells;
    let dt = path.wiener.grid.dt();
    let eps = path.epsilon;

    let axes: Vec<AxisPatches> = (0..d)
        .map(|k| {
            let a = m.axis(k);
            AxisPatches::new(a.start, a.length, bank.patches[k], a.periodic)
        })
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = axes.iter().map(|a| a.centres.len()).collect();
    let n_patches: usize = counts.iter().product();

    // per node: (patch, φ, ∂φ) for patches touching the node
    let mut support: Vec<Vec<(usize, f64, [f64; 2])>> = vec![Vec::new(); m.len()];
    for (p, entry) in support.iter_mut().enumerate() {
        let x = m.coordinate(p);
        for patch in 0..n_patches {
            let idx = if d == 1 {
                [patch, 0]
            } else {
                [patch / counts[1], patch % counts[1]]
            };
            let e0 = axes[0].eval(idx[0], x[0]);
            let (e1, de1) = if d == 2 {
                axes[1].eval(idx[1], x[1])
            } else {
                (1.0, 0.0)
            };
            let phi = e0.0 * e1;
            if phi != 0.0 || e0.1 * e1 != 0.0 || e0.0 * de1 != 0.0 {
                entry.push((patch, phi, [e0.1 * e1, e0.0 * de1]));
            }
        }
    }

    let mut patch_integrals = vec![0.0; n_patches];
    for (p, entry) in support.iter().enumerate() {
        let w = m.weights()[p];
        for &(i, pi, _) in entry {
            patch_integrals[i] += w * pi;
        }
    }
    // lumped mass: the patches form a partition of unity, so the row sums of
    // ∫φ_P φ_Q are the patch integrals
    let (lo, hi) = patch_integrals
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| {
            (lo.min(l), hi.max(l))
        });
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition_number <= MAX_BANK_CONDITION) {
        return Err(Error::IllConditioned(condition_number));
    }

    let thetas: Vec<CellEntropy> = (0..cells)
        .map(|c| bank.xi.cell(c))
        .map(|(a, b)| CellEntropy { a, b })
        .collect();
    let basis = &problem.basis;
    let flux = problem.flux.as_ref();
    let noise = problem.noise.as_ref();

    let block_results: Vec<(Vec<f64>, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = vec![0.0; n_patches * cells];
            let mut scale = 0.0;
            let first = b * bank.block_steps;
            let last = first + bank.block_steps;
            // time-derivative term ∫θ_c(u) φ_P at the block ends
            let u_end = path.nodal(basis, last);
            let u_start = path.nodal(basis, first);
            let mut diff = vec![0.0; n_patches * cells];
            for (p, entry) in support.iter().enumerate() {
                let w = m.weights()[p];
                for (c, th) in thetas.iter().enumerate() {
                    let dth = th.value(u_end[p]) - th.value(u_start[p]);
                    if dth == 0.0 {
                        continue;
                    }
                    for &(i, phi, _) in entry {
                        diff[i * cells + c] += w * dth * phi;
                    }
                }
            }
            for (ri, di) in r.iter_mut().zip(&diff) {
                *ri += di;
                scale += di.abs();
            }
            for k in first..last {
                let alpha = &path.coefficients[k];
                let u = basis.values().t().dot(alpha);
                let grads: Vec<Array1<f64>> = (0..d)
                    .map(|axis| basis.partials(axis).t().dot(alpha))
                    .collect();
                let dw = path.wiener.increments[k];
                for (p, entry) in support.iter().enumerate() {
                    let w = m.weights()[p];
                    let v = u[p];
                    let ginv = m.inverse_metric(p);
                    let du = [grads[0][p], if d == 2 { grads[1][p] } else { 0.0 }];
                    let phi_noise = if noise.is_zero() {
                        0.0
                    } else {
                        noise.amplitude(p, v)
                    };
                    for (c, th) in thetas.iter().enumerate() {
                        if v <= th.a && th.second(v) == 0.0 {
                            continue;
                        }
                        let q = th.flux(flux, p, v);
                        let t1 = th.first(v);
                        let t2 = th.second(v);
                        for &(i, phi, dphi) in entry {
                            let mut flux_term = 0.0;
                            let mut visc = 0.0;
                            for a in 0..d {
                                flux_term += q[a] * dphi[a];
                                for bb in 0..d {
                                    visc += ginv[a][bb] * du[a] * dphi[bb];
                                }
                            }
                            let drift = flux_term - eps * t1 * visc
                                + 0.5 * phi_noise * phi_noise * t2 * phi;
                            r[i * cells + c] -= w * (drift * dt + phi_noise * t1 * phi * dw);
                        }
                    }
                }
            }
            (r, scale)
        })
        .collect();

    let mut values = vec![0.0; blocks * n_patches * cells];
    let mut residuals = vec![0.0; blocks * n_patches * cells];
    let mut time_scale = 0.0;
    let mut time_profile = Vec::with_capacity(blocks);
    let (mut total, mut negative) = (0.0, 0.0);
    for (b, (r, scale)) in block_results.into_iter().enumerate() {
        time_scale += scale;
        let mut block_mass = 0.0;
        for c in 0..cells {
            for i in 0..n_patches {
                let idx = (b * n_patches + i) * cells + c;
                let mu = -r[i * cells + c] / patch_integrals[i];
                values[idx] = mu;
                residuals[idx] = r[i * cells + c];
                let part = mu * patch_integrals[i];
                block_mass += part;
                total += part.abs();
                if part < 0.0 {
                    negative -= part;
                }
            }
        }
        time_profile.push((path.times[(b + 1) * bank.block_steps], block_mass));
    }
    let negative_fraction = if total > 0.0 { negative / total } else { 0.0 };
    let relative_mass = if time_scale > 0.0 {
        total / time_scale
    } else {
        0.0
    };
    Ok(KineticDefect {
        blocks,
        patches: n_patches,
        cells,
        values,
        residuals,
        condition_number,
        total_mass: total,
        negative_mass: negative,
        negative_fraction,
        time_scale,
        relative_mass,
        time_profile,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// `E[D(t_m)]` over the ensemble.
    pub mean_distance: Vec<f64>,
    /// `E[D(t_m)²]`.
    pub mean_square: Vec<f64>,
    pub lhs_terminal: Estimate,
    pub rhs_initial: Estimate,
    /// `E[D(T)²] / E[D(0)²]`, zero when both vanish.
    pub ratio: f64,
    /// `max_m E[D(t_m)²] / E[D(0)²]`.
    pub max_ratio: f64,
    pub stability_constant: f64,
    /// Largest `|D − ‖u₁ − u₂‖_{L¹}|` seen on any path and time.
    pub layer_cake_error: f64,
    /// `2 δξ vol(M)`.
    pub layer_cake_tolerance: f64,
    pub identical_data: bool,
    pub pass: bool,
}

/// Paired runs from `u10` and `u20` driven by the same Wiener path per sample.
#[allow(clippy::too_many_arguments)]
pub fn contraction_experiment(
    problem: &Problem,
    cfg_a: &SolverConfig,
    cfg_b: &SolverConfig,
    u10: &[f64],
    u20: &[f64],
    n_paths: usize,
    xi: XiGrid,
    stability_constant: f64,
) -> Result<ContractionReport> {
    if cfg_a != cfg_b {
        return Err(Error::Mismatch(format!(
            "paired configs differ: {cfg_a:?} vs {cfg_b:?}"
        )));
    }
    if n_paths == 0 {
        return Err(Error::TooFewPaths { got: 0, min: 1 });
    }
    let m = &problem.manifold;
    let galerkin = Galerkin::new(problem.clone(), *cfg_a)?;
    let identical_data = u10 == u20;

    let per_path: Vec<(Vec<f64>, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let p1 = galerkin.run(u10, id)?;
            let p2 = galerkin.run(u20, id)?;
            let mut series = Vec::with_capacity(p1.coefficients.len());
            let mut worst: f64 = 0.0;
            for k in 0..p1.coefficients.len() {
                let a = p1.nodal(&problem.basis, k);
                let b = p2.nodal(&problem.basis, k);
                let (a, b) = (
                    a.as_slice().expect("contiguous"),
                    b.as_slice().expect("contiguous"),
                );
                let dist =
                    kinetic_distance(m, &kinetic_function(a, xi)?, &kinetic_function(b, xi)?)?;
                let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                worst = worst.max((dist - m.l1_norm(&diff)).abs());
                series.push(dist);
            }
            Ok((series, worst))
        })
        .collect::<Result<_>>()?;

    let steps = per_path[0].0.len();
    let times = cfg_a.grid.times();
    let column = |k: usize, sq: bool| -> Vec<f64> {
        per_path
            .iter()
            .map(|(s, _)| if sq { s[k] * s[k] } else { s[k] })
            .collect()
    };
    let mean_distance: Vec<f64> = (0..steps)
        .map(|k| pairwise_sum(&column(k, false)) / n_paths as f64)
        .collect();
    let mean_square: Vec<f64> = (0..steps)
        .map(|k| pairwise_sum(&column(k, true)) / n_paths as f64)
        .collect();
    let lhs_terminal = Estimate::from_samples(&column(steps - 1, true));
    let rhs_initial = Estimate::from_samples(&column(0, true));
    let ratio_of = |v: f64| {
        if rhs_initial.mean > 0.0 {
            v / rhs_initial.mean
        } else {
            0.0
        }
    };
    let ratio = ratio_of(lhs_terminal.mean);
    let max_ratio = mean_square.iter().map(|&v| ratio_of(v)).fold(0.0, f64::max);
    let layer_cake_error = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
    let layer_cake_tolerance = 2.0 * xi.spacing() * m.volume();
    let pass = if identical_data {
        mean_distance.iter().all(|&d| d == 0.0)
    } else {
        max_ratio <= stability_constant
    } && layer_cake_error <= layer_cake_tolerance;

    Ok(ContractionReport {
        times,
        mean_distance,
        mean_square,
        lhs_terminal,
        rhs_initial,
        ratio,
        max_ratio,
        stability_constant,
        layer_cake_error,
        layer_cake_tolerance,
        identical_data,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_kinetic_function() {
        let g = XiGrid::new(1.0, 8).unwrap();
        let h = kinetic_function(&[0.0], g).unwrap();
        for i in 0..8 {
            assert_eq!(h.value(0, i), if g.node(i) < 0.0 { 1.0 } else { 0.0 });
        }
        assert_eq!(h.layer_cake(0), 0.0);
        assert!(matches!(
            kinetic_function(&[1.0], g),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn young_measure_is_a_unit_atom() {
        let g = XiGrid::new(2.0, 16).unwrap();
        let h = kinetic_function(&[0.37, -1.9, 1.99], g).unwrap();
        for p in 0..3 {
            let nu = h.young_measure(p);
            assert_eq!(nu.iter().sum::<f64>(), 1.0);
            assert!(nu.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn cell_entropy_flux_matches_quadrature() {
        use crate::flux::{Profile, SeparableFlux};
        let m = ChartedManifold::torus1d(8).unwrap();
        let f = SeparableFlux::new(&m, vec![[1.5, 0.0]; 8], Profile::Burgers).unwrap();
        let th = CellEntropy { a: -0.25, b: 0.5 };
        for &u in &[-0.5, -0.1, 0.3, 0.9] {
            // Q = ∫_a^u θ'(v) v dv with a three-piece Simpson rule
            let n = 2000;
            let lo = th.a.min(u);
            let hgt = (u - lo) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let v = lo + i as f64 * hgt;
                let c = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += c * th.first(v) * 1.5 * v;
            }
            s *= hgt / 3.0;
            assert!((th.flux(&f, 0, u)[0] - s).abs() < 1e-6, "u = {u}");
        }
    }

    #[test]
    fn partition_of_unity() {
        for (periodic, count) in [(true, 5), (false, 4)] {
            let ax = AxisPatches::new(0.3, 2.0, count, periodic).unwrap();
            for i in 0..50 {
                let x = 0.3 + 2.0 * i as f64 / 49.0;
                let s: f64 = (0..count).map(|j| ax.eval(j, x).0).sum();
                let ds: f64 = (0..count).map(|j| ax.eval(j, x).1).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(ds.abs() < 1e-10);
            }
        }
    }
}
