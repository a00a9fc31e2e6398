//! Flux fields `f(x, ξ)`, noise amplitudes `Φ(x, ξ)` and checks of their standing
//! assumptions on a given grid.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::Array1;
use serde::Serialize;

use crate::geometry::{Chart, ChartedManifold};
use crate::{Error, Result};

/// A flux field evaluated at grid nodes. Components are chart components `f^k`.
pub trait FluxField: Send + Sync {
    fn dim(&self) -> usize;
    fn flux(&self, node: usize, xi: f64) -> [f64; 2];
    /// `a(x, ξ) = ∂_ξ f(x, ξ)`.
    fn speed(&self, node: usize, xi: f64) -> [f64; 2];
    /// `∫_0^ξ f(x, v) dv`, used by closed-form entropy fluxes.
    fn primitive(&self, node: usize, xi: f64) -> [f64; 2];
    fn is_zero(&self) -> bool {
        false
    }
}

/// A noise amplitude evaluated at grid nodes.
pub trait NoiseAmplitude: Send + Sync {
    fn amplitude(&self, node: usize, xi: f64) -> f64;
    /// `Φ′ = ∂_ξ Φ`.
    fn derivative(&self, node: usize, xi: f64) -> f64;
    /// `R_Φ` with `Φ(·, ξ) = 0` for `|ξ| ≥ R_Φ`, if the amplitude is compactly supported.
    fn cutoff_radius(&self) -> Option<f64>;
    fn is_zero(&self) -> bool {
        false
    }
}

/// The ξ-dependence `b(ξ)` of a separable flux.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Zero,
    /// `b(ξ) = ξ`.
    Transport,
    /// `b(ξ) = ξ²/2`.
    Burgers,
}

impl Profile {
    pub fn value(self, xi: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Transport => xi,
            Profile::Burgers => 0.5 * xi * xi,
        }
    }

    pub fn derivative(self, xi: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Transport => 1.0,
            Profile::Burgers => xi,
        }
    }

    pub fn primitive(self, xi: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Transport => 0.5 * xi * xi,
            Profile::Burgers => xi * xi * xi / 6.0,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Profile::Zero),
            "transport" => Ok(Profile::Transport),
            "burgers" => Ok(Profile::Burgers),
            other => Err(Error::UnknownFlux(other.to_string())),
        }
    }
}

/// The spatial vector field `c(x)` of a builtin flux.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// Constant chart components.
    Constant,
    /// `c = (∂₂ψ, −∂₁ψ)` with `ψ = sin x₁ sin x₂` (two-torus).
    StreamFunction,
    /// `c = w(θ) ∂_φ` with `w` vanishing at the band edges (sphere).
    Rotation,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(FieldKind::Constant),
            "stream-function" => Ok(FieldKind::StreamFunction),
            "rotation" => Ok(FieldKind::Rotation),
            other => Err(Error::UnknownFlux(other.to_string())),
        }
    }
}

/// `f(x, ξ) = c(x) b(ξ)` with `c` stored at the grid nodes.
#[derive(Clone, Debug)]
pub struct SeparableFlux {
    dim: usize,
    field: Vec<[f64; 2]>,
    profile: Profile,
}

impl SeparableFlux {
    pub fn new(manifold: &ChartedManifold, field: Vec<[f64; 2]>, profile: Profile) -> Result<Self> {
        if field.len() != manifold.len() {
            return Err(Error::Shape {
                expected: manifold.len(),
                got: field.len(),
            });
        }
        Ok(Self {
            dim: manifold.dim(),
            field,
            profile,
        })
    }

    pub fn zero(manifold: &ChartedManifold) -> Self {
        Self {
            dim: manifold.dim(),
            field: vec![[0.0; 2]; manifold.len()],
            profile: Profile::Zero,
        }
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn field(&self) -> &[[f64; 2]] {
        &self.field
    }
}

impl FluxField for SeparableFlux {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flux(&self, node: usize, xi: f64) -> [f64; 2] {
        let b = self.profile.value(xi);
        let c = self.field[node];
        [c[0] * b, c[1] * b]
    }

    fn speed(&self, node: usize, xi: f64) -> [f64; 2] {
        let b = self.profile.derivative(xi);
        let c = self.field[node];
        [c[0] * b, c[1] * b]
    }

    fn primitive(&self, node: usize, xi: f64) -> [f64; 2] {
        let b = self.profile.primitive(xi);
        let c = self.field[node];
        [c[0] * b, c[1] * b]
    }

    fn is_zero(&self) -> bool {
        self.profile == Profile::Zero || self.field.iter().all(|c| c[0] == 0.0 && c[1] == 0.0)
    }
}

/// Parameters of the builtin catalog.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxParams {
    /// Components of the constant field.
    pub direction: [f64; 2],
    /// Overall scale of the stream-function and rotation fields.
    pub amplitude: f64,
}

impl Default for FluxParams {
    fn default() -> Self {
        Self {
            direction: [1.0, 0.0],
            amplitude: 1.0,
        }
    }
}

/// Band-edge profile `sin²(π (θ − θ_min) / (π − 2θ_min))`.
pub fn band_taper(theta: f64, theta_min: f64) -> f64 {
    (PI * (theta - theta_min) / (PI - 2.0 * theta_min))
        .sin()
        .powi(2)
}

pub fn builtin_flux(
    manifold: &ChartedManifold,
    profile: Profile,
    field: FieldKind,
    params: FluxParams,
) -> Result<SeparableFlux> {
    let chart = manifold.chart();
    let (components, edge_value): (Vec<[f64; 2]>, Box<dyn Fn(f64) -> [f64; 2]>) =
        match (field, chart) {
            (FieldKind::Constant, _) => {
                let mut c = params.direction;
                if manifold.dim() == 1 {
                    c[1] = 0.0;
                }
                (vec![c; manifold.len()], Box::new(move |_| c))
            }
            (FieldKind::StreamFunction, Chart::FlatTorus { dim: 2 }) => {
                let a = params.amplitude;
                let c = manifold
                    .coordinates()
                    .iter()
                    .map(|x| [a * x[0].sin() * x[1].cos(), -a * x[0].cos() * x[1].sin()])
                    .collect();
                (c, Box::new(|_| [0.0, 0.0]))
            }
            (FieldKind::Rotation, Chart::SphereBand { theta_min }) => {
                let a = params.amplitude;
                let c = manifold
                    .coordinates()
                    .iter()
                    .map(|x| [0.0, a * band_taper(x[0], theta_min)])
                    .collect();
                (c, Box::new(move |th| [0.0, a * band_taper(th, theta_min)]))
            }
            (kind, _) => {
                return Err(Error::UnknownFlux(format!(
                    "{kind:?} field on {}",
                    manifold.name()
                )))
            }
        };
    if let Chart::SphereBand { theta_min } = chart {
        for theta in [theta_min, PI - theta_min] {
            let c = edge_value(theta);
            let value = c[0].abs().max(c[1].abs());
            if value > 1e-12 {
                return Err(Error::BandEdge {
                    name: format!("{field:?}"),
                    value,
                });
            }
        }
    }
    SeparableFlux::new(manifold, components, profile)
}

/// Default compatibility probes: 33 values spanning `[−R, R]`.
pub fn default_probes(radius: f64) -> Vec<f64> {
    (0..33)
        .map(|i| -radius + 2.0 * radius * i as f64 / 32.0)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub max_residual: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub pass: bool,
}

/// Checker tolerance `10 h²` with `h` the largest grid spacing.
pub fn compatibility_tolerance(manifold: &ChartedManifold) -> f64 {
    10.0 * manifold.spacing().powi(2)
}

/// `max_{ξ, x} |Div_g f(·, ξ)(x)|` over the probe set.
pub fn check_geometry_compatibility(
    manifold: &ChartedManifold,
    flux: &dyn FluxField,
    probes: &[f64],
    tol: f64,
) -> Result<CompatibilityReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("empty probe set".into()));
    }
    let mut max_residual: f64 = 0.0;
    for &xi in probes {
        let comps: Vec<Array1<f64>> = (0..manifold.dim())
            .map(|k| (0..manifold.len()).map(|p| flux.flux(p, xi)[k]).collect())
            .collect();
        let div = manifold.divergence(&comps)?;
        max_residual = div.iter().fold(max_residual, |m, v| m.max(v.abs()));
    }
    Ok(CompatibilityReport {
        max_residual,
        tolerance: tol,
        probes: probes.len(),
        pass: max_residual <= tol,
    })
}

/// Cutoff profile `χ(r)` of a separable noise, `r = ξ / R_Φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    /// `(1 − r²)²` on `|r| < 1`.
    Bump,
    /// `1` on `|r| ≤ inner`, smooth C^∞ step down to `0` at `|r| = 1`.
    Plateau { inner: f64 },
}

fn smooth_step(t: f64) -> (f64, f64) {
    // s(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}), rising from 0 to 1 on [0, 1]
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    let da = a / (t * t);
    let db = -b / ((1.0 - t) * (1.0 - t));
    let s = a / (a + b);
    let ds = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
    (s, ds)
}

impl Cutoff {
    /// `(χ(r), χ′(r))`.
    pub fn eval(self, r: f64) -> (f64, f64) {
        if r.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        match self {
            Cutoff::Bump => {
                let q = 1.0 - r * r;
                (q * q, -4.0 * r * q)
            }
            Cutoff::Plateau { inner } => {
                let t = (r.abs() - inner) / (1.0 - inner);
                let (s, ds) = smooth_step(t);
                (1.0 - s, -ds * r.signum() / (1.0 - inner))
            }
        }
    }
}

/// `Φ(x, ξ) = σ s(x) χ(ξ / R_Φ)`.
#[derive(Clone, Debug)]
pub struct SeparableNoise {
    sigma: f64,
    radius: f64,
    spatial: Array1<f64>,
    cutoff: Cutoff,
}

impl SeparableNoise {
    pub fn new(sigma: f64, radius: f64, spatial: Array1<f64>, cutoff: Cutoff) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise radius must be positive, got {radius}"
            )));
        }
        if let Cutoff::Plateau { inner } = cutoff {
            if !(0.0..1.0).contains(&inner) {
                return Err(Error::InvalidArgument(format!(
                    "plateau fraction {inner} not in [0, 1)"
                )));
            }
        }
        Ok(Self {
            sigma,
            radius,
            spatial,
            cutoff,
        })
    }

    pub fn zero(manifold: &ChartedManifold) -> Self {
        Self {
            sigma: 0.0,
            radius: 1.0,
            spatial: Array1::zeros(manifold.len()),
            cutoff: Cutoff::Bump,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spatial(&self) -> &Array1<f64> {
        &self.spatial
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }
}

impl NoiseAmplitude for SeparableNoise {
    fn amplitude(&self, node: usize, xi: f64) -> f64 {
        self.sigma * self.spatial[node] * self.cutoff.eval(xi / self.radius).0
    }

    fn derivative(&self, node: usize, xi: f64) -> f64 {
        self.sigma * self.spatial[node] * self.cutoff.eval(xi / self.radius).1 / self.radius
    }

    fn cutoff_radius(&self) -> Option<f64> {
        Some(self.radius)
    }

    fn is_zero(&self) -> bool {
        self.sigma == 0.0 || self.spatial.iter().all(|&s| s == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseReport {
    /// `∫_M sup_ξ |Φ(x, ξ) ξ| dγ`.
    pub envelope_integral: f64,
    /// `max_x sup_ξ |Φ(x, ξ) ξ|`.
    pub envelope_max: f64,
    /// Largest `|Φ|` sampled outside the declared cutoff radius.
    pub support_violation: f64,
    pub support_ok: bool,
    /// Smallest `C` with `‖f(·, ξ)‖_∞ ≤ C (1 + |ξ|)` for `|ξ| ≤ R`.
    pub growth_constant: f64,
    /// Observed exponent `p` in `sup_{|ξ|≤R} ‖f(·, ξ)‖_∞ ∝ R^p`, from `R` against `R/2`.
    pub growth_exponent: f64,
    /// Set when the growth is super-linear: the bound then holds only on `|ξ| ≤ R`.
    pub growth_local_only: bool,
    pub note: Option<String>,
}

const ENVELOPE_SAMPLES: usize = 2049;

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

fn metric_norm(manifold: &ChartedManifold, p: usize, v: [f64; 2]) -> f64 {
    let g = manifold.metric(p);
    let d = manifold.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += g[i][j] * v[i] * v[j];
        }
    }
    acc.sqrt()
}

/// Samples the envelope `sup_ξ |Φξ|`, the support cutoff and the flux growth on the
/// working interval `[−R, R]`. Reports only; never fails on a violated assumption.
pub fn check_noise_assumptions(
    manifold: &ChartedManifold,
    noise: &dyn NoiseAmplitude,
    flux: &dyn FluxField,
    radius: f64,
) -> Result<NoiseReport> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "working radius must be positive, got {radius}"
        )));
    }
    let span = noise.cutoff_radius().unwrap_or(radius);
    let h = 2.0 * span / (ENVELOPE_SAMPLES - 1) as f64;
    let mut envelope = Array1::zeros(manifold.len());
    if !noise.is_zero() {
        for p in 0..manifold.len() {
            let g = |xi: f64| (noise.amplitude(p, xi) * xi).abs();
            let (mut best, mut arg) = (0.0, 0.0);
            for i in 0..ENVELOPE_SAMPLES {
                let xi = -span + i as f64 * h;
                let v = g(xi);
                if v > best {
                    best = v;
                    arg = xi;
                }
            }
            if best > 0.0 {
                best = golden_max(g, (arg - h).max(-span), (arg + h).min(span)).max(best);
            }
            envelope[p] = best;
        }
    }
    let envelope_integral = manifold.integrate(envelope.as_slice().expect("contiguous"));
    let envelope_max = envelope.iter().cloned().fold(0.0, f64::max);

    let mut support_violation: f64 = 0.0;
    if let Some(r_phi) = noise.cutoff_radius() {
        for p in 0..manifold.len() {
            for i in 0..=16 {
                let xi = r_phi * (1.0 + i as f64 / 16.0);
                support_violation = support_violation
                    .max(noise.amplitude(p, xi).abs())
                    .max(noise.amplitude(p, -xi).abs());
            }
        }
    }

    let sup_flux = |r: f64| -> (f64, f64) {
        let mut sup: f64 = 0.0;
        let mut c: f64 = 0.0;
        for i in 0..ENVELOPE_SAMPLES {
            let xi = -r + 2.0 * r * i as f64 / (ENVELOPE_SAMPLES - 1) as f64;
            let norm = (0..manifold.len())
                .map(|p| metric_norm(manifold, p, flux.flux(p, xi)))
                .fold(0.0, f64::max);
            sup = sup.max(norm);
            c = c.max(norm / (1.0 + xi.abs()));
        }
        (sup, c)
    };
    let (sup_r, growth_constant) = sup_flux(radius);
    let (sup_half, _) = sup_flux(0.5 * radius);
    let growth_exponent = if sup_half > 0.0 && sup_r > 0.0 {
        (sup_r / sup_half).log2()
    } else {
        0.0
    };
    let growth_local_only = growth_exponent > 1.1;
    let note = growth_local_only.then(|| format!("growth bound holds only on |xi| <= {radius}"));

    Ok(NoiseReport {
        envelope_integral,
        envelope_max,
        support_violation,
        support_ok: support_violation == 0.0,
        growth_constant,
        growth_exponent,
        growth_local_only,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_derivatives_match_differences() {
        for cutoff in [Cutoff::Bump, Cutoff::Plateau { inner: 0.5 }] {
            for &r in &[-0.9, -0.6, -0.2, 0.3, 0.55, 0.8, 0.95] {
                let d = 1e-6;
                let fd = (cutoff.eval(r + d).0 - cutoff.eval(r - d).0) / (2.0 * d);
                assert!((fd - cutoff.eval(r).1).abs() < 1e-6, "{cutoff:?} at {r}");
            }
        }
        assert_eq!(Cutoff::Plateau { inner: 0.5 }.eval(0.4).0, 1.0);
        assert_eq!(Cutoff::Bump.eval(1.0).0, 0.0);
    }

    #[test]
    fn names_parse() {
        assert_eq!("burgers".parse::<Profile>().unwrap(), Profile::Burgers);
        assert_eq!(
            "rotation".parse::<FieldKind>().unwrap(),
            FieldKind::Rotation
        );
        assert!(matches!(
            "kdv".parse::<Profile>(),
            Err(Error::UnknownFlux(_))
        ));
    }

    #[test]
    fn sphere_constant_field_must_vanish_at_edges() {
        let s = ChartedManifold::sphere2(16, 16, 0.15).unwrap();
        let params = FluxParams {
            direction: [0.0, 1.0],
            amplitude: 1.0,
        };
        let err = builtin_flux(&s, Profile::Transport, FieldKind::Constant, params).unwrap_err();
        assert!(matches!(err, Error::BandEdge { .. }));
    }

    #[test]
    fn stream_function_needs_two_torus() {
        let m = ChartedManifold::torus1d(16).unwrap();
        let r = builtin_flux(
            &m,
            Profile::Burgers,
            FieldKind::StreamFunction,
            FluxParams::default(),
        );
        assert!(matches!(r, Err(Error::UnknownFlux(_))));
    }
}
