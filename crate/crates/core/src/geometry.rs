//! Single-chart Riemannian manifolds and their metric operators.
//!
//! Every manifold is a tensor grid over a coordinate box. Periodic axes wrap; the
//! polar axis of the sphere is truncated to the band `[θ_min, π − θ_min]` and treated
//! with reflecting (zero-flux) edges. Quadrature weights are the exact Riemannian
//! measure of each grid cell, so integrating the constant 1 returns the manifold volume.
//!
//! Node layout is row-major: for two-dimensional charts node `p = i0 * n1 + i1`, with
//! axis 0 being `x₁` (torus) or `θ` (sphere) and axis 1 being `x₂` or `φ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MIN_NODES_PER_AXIS: usize = 8;
pub const DEFAULT_BASIS_CAP: usize = 4096;

/// Chart components of a (co)metric; for one-dimensional charts only `[0][0]` is used.
pub type Metric = [[f64; 2]; 2];

/// Config-level description of a manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldDescriptor {
    pub name: String,
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_min: Option<f64>,
}

impl ManifoldDescriptor {
    pub fn torus1d(nodes: usize) -> Self {
        Self {
            name: "torus1d".into(),
            nodes: vec![nodes],
            theta_min: None,
        }
    }

    pub fn torus2d(n1: usize, n2: usize) -> Self {
        Self {
            name: "torus2d".into(),
            nodes: vec![n1, n2],
            theta_min: None,
        }
    }

    pub fn sphere2(n_theta: usize, n_phi: usize, theta_min: f64) -> Self {
        Self {
            name: "sphere2".into(),
            nodes: vec![n_theta, n_phi],
            theta_min: Some(theta_min),
        }
    }
}

/// The closed-form metric of a builtin chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Chart {
    FlatTorus {
        dim: usize,
    },
    /// Round unit sphere in `(θ, φ)` coordinates, restricted to a latitude band.
    SphereBand {
        theta_min: f64,
    },
}

impl Chart {
    pub fn dim(&self) -> usize {
        match self {
            Chart::FlatTorus { dim } => *dim,
            Chart::SphereBand { .. } => 2,
        }
    }

    pub fn metric(&self, x: [f64; 2]) -> Metric {
        match self {
            Chart::FlatTorus { .. } => [[1.0, 0.0], [0.0, 1.0]],
            Chart::SphereBand { .. } => {
                let s = x[0].sin();
                [[1.0, 0.0], [0.0, s * s]]
            }
        }
    }

    /// `∂_k g_ij` at `x`.
    pub fn metric_partial(&self, k: usize, x: [f64; 2]) -> Metric {
        match self {
            Chart::SphereBand { .. } if k == 0 => {
                [[0.0, 0.0], [0.0, 2.0 * x[0].sin() * x[0].cos()]]
            }
            _ => [[0.0; 2]; 2],
        }
    }

    /// `G = √det g`.
    pub fn gramian(&self, x: [f64; 2]) -> f64 {
        match self {
            Chart::FlatTorus { .. } => 1.0,
            Chart::SphereBand { .. } => x[0].sin(),
        }
    }

    /// `∂_k ln G` in closed form.
    pub fn log_gramian_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            Chart::FlatTorus { .. } => [0.0, 0.0],
            Chart::SphereBand { .. } => [x[0].cos() / x[0].sin(), 0.0],
        }
    }

    /// `Γ^j_{kj} = ½ g^{jl} ∂_k g_{jl}`, evaluated from the metric and its derivatives.
    pub fn christoffel_trace(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.dim();
        let inv = invert(&self.metric(x), d);
        let mut out = [0.0; 2];
        for (k, slot) in out.iter_mut().enumerate().take(d) {
            let dg = self.metric_partial(k, x);
            let mut acc = 0.0;
            for j in 0..d {
                for l in 0..d {
                    acc += inv[j][l] * dg[j][l];
                }
            }
            *slot = 0.5 * acc;
        }
        out
    }

    /// Riemannian measure of the coordinate cell centred at `x` with the given widths.
    fn cell_measure(&self, x: [f64; 2], widths: [f64; 2]) -> f64 {
        match self {
            Chart::FlatTorus { dim: 1 } => widths[0],
            Chart::FlatTorus { .. } => widths[0] * widths[1],
            Chart::SphereBand { .. } => {
                let h = widths[0];
                ((x[0] - 0.5 * h).cos() - (x[0] + 0.5 * h).cos()) * widths[1]
            }
        }
    }
}

fn invert(g: &Metric, d: usize) -> Metric {
    if d == 1 {
        return [[1.0 / g[0][0], 0.0], [0.0, 1.0]];
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    [
        [g[1][1] / det, -g[0][1] / det],
        [-g[1][0] / det, g[0][0] / det],
    ]
}

/// One coordinate axis of the tensor grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub length: f64,
    pub nodes: usize,
    pub spacing: f64,
    /// Periodic axes carry nodes at `start + i h`; bounded axes are cell-centred.
    pub periodic: bool,
}

impl GridAxis {
    fn periodic(length: f64, nodes: usize) -> Self {
        Self {
            start: 0.0,
            length,
            nodes,
            spacing: length / nodes as f64,
            periodic: true,
        }
    }

    fn bounded(start: f64, length: f64, nodes: usize) -> Self {
        Self {
            start,
            length,
            nodes,
            spacing: length / nodes as f64,
            periodic: false,
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        if self.periodic {
            self.start + i as f64 * self.spacing
        } else {
            self.start + (i as f64 + 0.5) * self.spacing
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }
}

/// A compact manifold represented through one chart and a tensor quadrature grid.
#[derive(Clone, Debug)]
pub struct ChartedManifold {
    name: String,
    chart: Chart,
    axes: Vec<GridAxis>,
    coords: Vec<[f64; 2]>,
    metric: Vec<Metric>,
    inverse_metric: Vec<Metric>,
    gramian: Array1<f64>,
    christoffel: Vec<[f64; 2]>,
    weights: Array1<f64>,
    /// Per axis: flux-form coefficient `G g^{kk} · (transverse width) / h_k` on the
    /// forward face of each node, zero where the face is a band edge.
    faces: Vec<Array1<f64>>,
}

pub fn build_manifold(desc: &ManifoldDescriptor) -> Result<ChartedManifold> {
    let expect_axes = |n: usize| -> Result<()> {
        if desc.nodes.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} needs {} node counts, got {}",
                desc.name,
                n,
                desc.nodes.len()
            )));
        }
        for (axis, &got) in desc.nodes.iter().enumerate() {
            if got < MIN_NODES_PER_AXIS {
                return Err(Error::Resolution {
                    axis,
                    got,
                    min: MIN_NODES_PER_AXIS,
                });
            }
        }
        Ok(())
    };
    let (chart, axes) = match desc.name.as_str() {
        "torus1d" => {
            expect_axes(1)?;
            (
                Chart::FlatTorus { dim: 1 },
                vec![GridAxis::periodic(2.0 * PI, desc.nodes[0])],
            )
        }
        "torus2d" => {
            expect_axes(2)?;
            (
                Chart::FlatTorus { dim: 2 },
                vec![
                    GridAxis::periodic(2.0 * PI, desc.nodes[0]),
                    GridAxis::periodic(2.0 * PI, desc.nodes[1]),
                ],
            )
        }
        "sphere2" => {
            expect_axes(2)?;
            let theta_min = desc.theta_min.unwrap_or(0.15);
            if !(theta_min > 0.0 && theta_min < 0.5 * PI) {
                return Err(Error::PolarMargin(theta_min));
            }
            (
                Chart::SphereBand { theta_min },
                vec![
                    GridAxis::bounded(theta_min, PI - 2.0 * theta_min, desc.nodes[0]),
                    GridAxis::periodic(2.0 * PI, desc.nodes[1]),
                ],
            )
        }
        other => return Err(Error::UnknownManifold(other.to_string())),
    };
    Ok(ChartedManifold::assemble(desc.name.clone(), chart, axes))
}

impl ChartedManifold {
    pub fn torus1d(nodes: usize) -> Result<Self> {
        build_manifold(&ManifoldDescriptor::torus1d(nodes))
    }

    pub fn torus2d(n1: usize, n2: usize) -> Result<Self> {
        build_manifold(&ManifoldDescriptor::torus2d(n1, n2))
    }

    pub fn sphere2(n_theta: usize, n_phi: usize, theta_min: f64) -> Result<Self> {
        build_manifold(&ManifoldDescriptor::sphere2(n_theta, n_phi, theta_min))
    }

    fn assemble(name: String, chart: Chart, axes: Vec<GridAxis>) -> Self {
        let d = axes.len();
        let shape = [axes[0].nodes, if d == 2 { axes[1].nodes } else { 1 }];
        let len = shape[0] * shape[1];
        let spacing = [axes[0].spacing, if d == 2 { axes[1].spacing } else { 1.0 }];

        let mut coords = Vec::with_capacity(len);
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                let x1 = if d == 2 { axes[1].coordinate(i1) } else { 0.0 };
                coords.push([axes[0].coordinate(i0), x1]);
            }
        }
        let metric: Vec<Metric> = coords.iter().map(|&x| chart.metric(x)).collect();
        let inverse_metric = metric.iter().map(|g| invert(g, d)).collect();
        let gramian = coords.iter().map(|&x| chart.gramian(x)).collect();
        let christoffel = coords.iter().map(|&x| chart.christoffel_trace(x)).collect();
        let weights = coords
            .iter()
            .map(|&x| chart.cell_measure(x, spacing))
            .collect();

        let mut faces = Vec::with_capacity(d);
        for k in 0..d {
            let transverse = if d == 2 { spacing[1 - k] } else { 1.0 };
            let mut face = Array1::zeros(len);
            for (p, x) in coords.iter().enumerate() {
                let i = [p / shape[1], p % shape[1]];
                if !axes[k].periodic && i[k] + 1 == axes[k].nodes {
                    continue;
                }
                let mut xf = *x;
                xf[k] += 0.5 * spacing[k];
                let inv = invert(&chart.metric(xf), d);
                face[p] = chart.gramian(xf) * inv[k][k] * transverse / spacing[k];
            }
            faces.push(face);
        }

        Self {
            name,
            chart,
            axes,
            coords,
            metric,
            inverse_metric,
            gramian,
            christoffel,
            weights,
            faces,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &GridAxis {
        &self.axes[k]
    }

    pub fn is_periodic(&self) -> bool {
        self.axes.iter().all(|a| a.periodic)
    }

    /// Largest grid spacing.
    pub fn spacing(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).fold(0.0, f64::max)
    }

    pub fn coordinate(&self, p: usize) -> [f64; 2] {
        self.coords[p]
    }

    pub fn coordinates(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn metric(&self, p: usize) -> &Metric {
        &self.metric[p]
    }

    pub fn inverse_metric(&self, p: usize) -> &Metric {
        &self.inverse_metric[p]
    }

    pub fn gramian(&self) -> &Array1<f64> {
        &self.gramian
    }

    pub fn christoffel_trace(&self, p: usize) -> [f64; 2] {
        self.christoffel[p]
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.weights.sum()
    }

    /// `∫_M v dγ` by grid quadrature.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.len());
        self.weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }

    /// `‖v‖_{L¹(M)}`.
    pub fn l1_norm(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(w, x)| w * x.abs()).sum()
    }

    /// `‖v‖_{L²(M)}`.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .map(|(w, x)| w * x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Evaluates a function of the chart coordinates at every node.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Array1<f64> {
        self.coords.iter().map(|&x| f(x)).collect()
    }

    fn shape(&self) -> [usize; 2] {
        [
            self.axes[0].nodes,
            if self.dim() == 2 {
                self.axes[1].nodes
            } else {
                1
            },
        ]
    }

    pub fn index(&self, i: [usize; 2]) -> usize {
        i[0] * self.shape()[1] + i[1]
    }

    pub fn multi_index(&self, p: usize) -> [usize; 2] {
        let n1 = self.shape()[1];
        [p / n1, p % n1]
    }

    /// Neighbouring node along `axis`, wrapping on periodic axes.
    pub fn neighbor(&self, p: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut i = self.multi_index(p);
        let n = self.axes[axis].nodes;
        if forward {
            if i[axis] + 1 == n {
                if !self.axes[axis].periodic {
                    return None;
                }
                i[axis] = 0;
            } else {
                i[axis] += 1;
            }
        } else if i[axis] == 0 {
            if !self.axes[axis].periodic {
                return None;
            }
            i[axis] = n - 1;
        } else {
            i[axis] -= 1;
        }
        Some(self.index(i))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Chart partial derivative `∂_k v`: centred differences, second-order one-sided
    /// stencils at the edges of a bounded axis.
    pub fn partial(&self, v: &[f64], axis: usize) -> Result<Array1<f64>> {
        self.check_len(v)?;
        let h = self.axes[axis].spacing;
        let n = self.axes[axis].nodes;
        let periodic = self.axes[axis].periodic;
        let mut out = Array1::zeros(self.len());
        for p in 0..self.len() {
            let i = self.multi_index(p)[axis];
            let at = |offset: isize| -> f64 {
                let mut idx = self.multi_index(p);
                idx[axis] = (i as isize + offset).rem_euclid(n as isize) as usize;
                v[self.index(idx)]
            };
            out[p] = if periodic || (i > 0 && i + 1 < n) {
                (at(1) - at(-1)) / (2.0 * h)
            } else if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else {
                (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
            };
        }
        Ok(out)
    }

    /// `Div X = ∂_k X^k + Γ^j_{kj} X^k` for a field given by its chart components.
    pub fn divergence(&self, field: &[Array1<f64>]) -> Result<Array1<f64>> {
        if field.len() != self.dim() {
            return Err(Error::ComponentCount {
                expected: self.dim(),
                got: field.len(),
            });
        }
        let mut out = Array1::zeros(self.len());
        for (k, comp) in field.iter().enumerate() {
            let comp = comp.as_slice().expect("contiguous field");
            out += &self.partial(comp, k)?;
            for (p, o) in out.iter_mut().enumerate() {
                *o += self.christoffel[p][k] * comp[p];
            }
        }
        Ok(out)
    }

    /// `∇v = g^{ij} ∂_i v ∂_j`, returned as contravariant chart components.
    pub fn gradient(&self, v: &[f64]) -> Result<Vec<Array1<f64>>> {
        self.check_len(v)?;
        let d = self.dim();
        let partials: Vec<Array1<f64>> =
            (0..d).map(|k| self.partial(v, k)).collect::<Result<_>>()?;
        let mut out = vec![Array1::zeros(self.len()); d];
        for p in 0..self.len() {
            let inv = &self.inverse_metric[p];
            for (j, comp) in out.iter_mut().enumerate() {
                comp[p] = (0..d).map(|i| inv[i][j] * partials[i][p]).sum();
            }
        }
        Ok(out)
    }

    /// Metric inner product `g_ij X^i Y^j` of two contravariant fields at each node.
    pub fn metric_dot(&self, x: &[Array1<f64>], y: &[Array1<f64>]) -> Array1<f64> {
        let d = self.dim();
        (0..self.len())
            .map(|p| {
                let g = &self.metric[p];
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += g[i][j] * x[i][p] * y[j][p];
                    }
                }
                acc
            })
            .collect()
    }

    /// Conservative Laplace–Beltrami operator `(1/G) ∂_i (G g^{ij} ∂_j v)`.
    ///
    /// Flux-form differencing over cell faces; band edges carry zero flux, so
    /// `∫ Δ_g v dγ` vanishes up to rounding on every builtin chart.
    pub fn laplace_beltrami(&self, v: &[f64]) -> Result<Array1<f64>> {
        self.check_len(v)?;
        let mut out = Array1::zeros(self.len());
        for p in 0..self.len() {
            let mut acc = 0.0;
            for k in 0..self.dim() {
                if let Some(q) = self.neighbor(p, k, true) {
                    acc += self.faces[k][p] * (v[q] - v[p]);
                }
                if let Some(r) = self.neighbor(p, k, false) {
                    acc -= self.faces[k][r] * (v[p] - v[r]);
                }
            }
            out[p] = acc / self.weights[p];
        }
        Ok(out)
    }

    /// Pseudo-spectral Laplacian for fully periodic (flat) charts.
    pub fn spectral_laplacian(&self, v: &[f64]) -> Result<Array1<f64>> {
        self.check_len(v)?;
        if !matches!(self.chart, Chart::FlatTorus { .. }) {
            return Err(Error::InvalidArgument(
                "spectral Laplacian needs a flat periodic chart".into(),
            ));
        }
        let shape = self.shape();
        let mut planner = FftPlanner::<f64>::new();
        let mut out = Array1::zeros(self.len());
        for k in 0..self.dim() {
            let n = self.axes[k].nodes;
            let scale = 2.0 * PI / self.axes[k].length;
            let fft = planner.plan_fft_forward(n);
            let ifft = planner.plan_fft_inverse(n);
            let lines = self.len() / n;
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for line in 0..lines {
                let node = |j: usize| -> usize {
                    if self.dim() == 1 {
                        j
                    } else if k == 0 {
                        j * shape[1] + line
                    } else {
                        line * shape[1] + j
                    }
                };
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(v[node(j)], 0.0);
                }
                fft.process(&mut buf);
                for (j, b) in buf.iter_mut().enumerate() {
                    let wave = if j <= n / 2 {
                        j as f64
                    } else {
                        j as f64 - n as f64
                    };
                    *b *= -(wave * scale).powi(2) / n as f64;
                }
                ifft.process(&mut buf);
                for (j, b) in buf.iter().enumerate() {
                    out[node(j)] += b.re;
                }
            }
        }
        Ok(out)
    }

    /// Dense Laplacian symmetrised by the quadrature weights: `W^{1/2} L W^{-1/2}`.
    fn symmetric_laplacian(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut s = DMatrix::zeros(n, n);
        for p in 0..n {
            for k in 0..self.dim() {
                if let Some(q) = self.neighbor(p, k, true) {
                    let c = self.faces[k][p];
                    let wpq = (self.weights[p] * self.weights[q]).sqrt();
                    s[(p, q)] += c / wpq;
                    s[(q, p)] += c / wpq;
                    s[(p, p)] -= c / self.weights[p];
                    s[(q, q)] -= c / self.weights[q];
                }
            }
        }
        s
    }
}

/// Which trigonometric factor a mode carries along a periodic axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Trig {
    Constant,
    Cos,
    Sin,
}

/// Identifies an eigenfunction; the derived ordering is the tie-break among equal
/// eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ModeLabel {
    /// Torus Fourier mode `cos(k·x)` / `sin(k·x)`.
    Fourier { wave: [i32; 2], kind: Trig },
    /// Sphere-band mode `Θ_r(θ) · trig(mφ)`, the `r`-th radial eigenvector of order `m`.
    Sector { order: u32, radial: u32, kind: Trig },
    /// Eigenvector of the full dense grid Laplacian.
    Discrete { index: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BasisSource {
    /// Closed-form eigenfunctions (torus Fourier modes).
    Analytic,
    /// Eigenvectors of the discrete flux-form Laplacian.
    Discrete,
}

/// Orthonormal Laplace–Beltrami eigenpairs, ordered by `|λ|` ascending.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    labels: Vec<ModeLabel>,
    values: Array2<f64>,
    partials: Vec<Array2<f64>>,
    source: BasisSource,
}

pub fn build_eigenbasis(manifold: &ChartedManifold, n: usize) -> Result<EigenBasis> {
    build_eigenbasis_capped(manifold, n, DEFAULT_BASIS_CAP)
}

pub fn build_eigenbasis_capped(
    manifold: &ChartedManifold,
    n: usize,
    cap: usize,
) -> Result<EigenBasis> {
    if n == 0 {
        return Err(Error::EmptyBasis);
    }
    if n > cap {
        return Err(Error::BasisTooLarge { requested: n, cap });
    }
    match manifold.chart() {
        Chart::FlatTorus { .. } => torus_basis(manifold, n),
        Chart::SphereBand { .. } => sphere_basis(manifold, n),
    }
}

/// Lowest `n` eigenvectors of the full dense grid Laplacian.
pub fn build_discrete_eigenbasis(manifold: &ChartedManifold, n: usize) -> Result<EigenBasis> {
    if n == 0 {
        return Err(Error::EmptyBasis);
    }
    if n > manifold.len() {
        return Err(Error::BasisTooLarge {
            requested: n,
            cap: manifold.len(),
        });
    }
    let eig = SymmetricEigen::new(manifold.symmetric_laplacian());
    let mut order: Vec<usize> = (0..manifold.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut modes = Vec::with_capacity(n);
    for (rank, &col) in order.iter().take(n).enumerate() {
        let mut values: Array1<f64> = (0..manifold.len())
            .map(|p| eig.eigenvectors[(p, col)] / manifold.weights()[p].sqrt())
            .collect();
        normalize(manifold, &mut values);
        let lambda = snap_null(eig.eigenvalues[col]);
        modes.push((lambda, ModeLabel::Discrete { index: rank as u32 }, values));
    }
    assemble_basis(manifold, modes, BasisSource::Discrete, |m, _, v, k| {
        m.partial(v.as_slice().expect("contiguous"), k)
            .expect("shape")
    })
}

/// The null space of the Laplacian is exactly the constants; eigensolver rounding on
/// that eigenvalue is removed so the mean mode is never damped.
fn snap_null(lambda: f64) -> f64 {
    if lambda.abs() < 1e-10 {
        0.0
    } else {
        lambda.min(0.0)
    }
}

fn normalize(manifold: &ChartedManifold, values: &mut Array1<f64>) {
    let norm = manifold.l2_norm(values.as_slice().expect("contiguous"));
    *values /= norm;
}

fn assemble_basis(
    manifold: &ChartedManifold,
    mut modes: Vec<(f64, ModeLabel, Array1<f64>)>,
    source: BasisSource,
    partial: impl Fn(&ChartedManifold, &ModeLabel, &Array1<f64>, usize) -> Array1<f64>,
) -> Result<EigenBasis> {
    modes.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1)));
    let n = modes.len();
    let len = manifold.len();
    let mut values = Array2::zeros((n, len));
    let mut partials = vec![Array2::zeros((n, len)); manifold.dim()];
    for (j, (_, label, v)) in modes.iter().enumerate() {
        values.row_mut(j).assign(v);
        for (k, pk) in partials.iter_mut().enumerate() {
            pk.row_mut(j).assign(&partial(manifold, label, v, k));
        }
    }
    Ok(EigenBasis {
        eigenvalues: modes.iter().map(|m| m.0).collect(),
        labels: modes.iter().map(|m| m.1).collect(),
        values,
        partials,
        source,
    })
}

fn torus_basis(manifold: &ChartedManifold, n: usize) -> Result<EigenBasis> {
    let d = manifold.dim();
    let reach = if d == 1 {
        n as i32 / 2 + 1
    } else {
        (n as f64).sqrt().ceil() as i32 + 1
    };
    let mut waves = Vec::new();
    let range2 = if d == 2 { -reach..=reach } else { 0..=0 };
    for k1 in 0..=reach {
        for k2 in range2.clone() {
            if k1 > 0 || k2 > 0 {
                waves.push([k1, k2]);
            }
        }
    }
    let mut labels = vec![ModeLabel::Fourier {
        wave: [0, 0],
        kind: Trig::Constant,
    }];
    for w in waves {
        labels.push(ModeLabel::Fourier {
            wave: w,
            kind: Trig::Cos,
        });
        labels.push(ModeLabel::Fourier {
            wave: w,
            kind: Trig::Sin,
        });
    }
    let norm2 = |l: &ModeLabel| match l {
        ModeLabel::Fourier { wave, .. } => wave[0] * wave[0] + wave[1] * wave[1],
        _ => unreachable!(),
    };
    labels.sort_by(|a, b| norm2(a).cmp(&norm2(b)).then(a.cmp(b)));
    labels.truncate(n);

    for (axis, a) in manifold.axes().iter().enumerate() {
        let kmax = labels
            .iter()
            .map(|l| match l {
                ModeLabel::Fourier { wave, .. } => wave[axis].unsigned_abs() as usize,
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        if a.nodes < 2 * kmax + 1 {
            return Err(Error::Resolution {
                axis,
                got: a.nodes,
                min: 2 * kmax + 1,
            });
        }
    }

    let vol = manifold.volume();
    let modes = labels
        .into_iter()
        .map(|label| {
            let ModeLabel::Fourier { wave, kind } = label else {
                unreachable!()
            };
            let amp = if kind == Trig::Constant {
                1.0 / vol.sqrt()
            } else {
                (2.0 / vol).sqrt()
            };
            let values = manifold.sample(|x| {
                let phase = wave[0] as f64 * x[0] + wave[1] as f64 * x[1];
                match kind {
                    Trig::Constant => amp,
                    Trig::Cos => amp * phase.cos(),
                    Trig::Sin => amp * phase.sin(),
                }
            });
            (-(norm2(&label) as f64), label, values)
        })
        .collect();

    assemble_basis(manifold, modes, BasisSource::Analytic, |m, label, _, k| {
        let ModeLabel::Fourier { wave, kind } = *label else {
            unreachable!()
        };
        let amp = if kind == Trig::Constant {
            1.0 / vol.sqrt()
        } else {
            (2.0 / vol).sqrt()
        };
        let kk = wave[k] as f64;
        m.sample(|x| {
            let phase = wave[0] as f64 * x[0] + wave[1] as f64 * x[1];
            match kind {
                Trig::Constant => 0.0,
                Trig::Cos => -amp * kk * phase.sin(),
                Trig::Sin => amp * kk * phase.cos(),
            }
        })
    })
}

/// Sphere band: the metric is φ-independent, so the discrete Laplacian splits into
/// Fourier sectors `m`; each sector is a symmetric tridiagonal problem in θ whose
/// φ-part uses the discrete symbol `(2 − 2 cos(m h_φ)) / h_φ²` of the grid operator.
fn sphere_basis(manifold: &ChartedManifold, n: usize) -> Result<EigenBasis> {
    let n_theta = manifold.axis(0).nodes;
    let n_phi = manifold.axis(1).nodes;
    let h_phi = manifold.axis(1).spacing;
    let max_order = (n_phi - 1) / 2;
    let column: Vec<usize> = (0..n_theta).map(|i| manifold.index([i, 0])).collect();
    let w: Vec<f64> = column.iter().map(|&p| manifold.weights()[p]).collect();

    let sector = |m: usize| -> (Vec<f64>, DMatrix<f64>) {
        let symbol = 2.0 - 2.0 * (m as f64 * h_phi).cos();
        let mut s = DMatrix::<f64>::zeros(n_theta, n_theta);
        for i in 0..n_theta {
            let p = column[i];
            s[(i, i)] -= manifold.faces[1][p] * symbol / w[i];
            if i + 1 < n_theta {
                let c = manifold.faces[0][p];
                s[(i, i)] -= c / w[i];
                s[(i + 1, i + 1)] -= c / w[i + 1];
                let off = c / (w[i] * w[i + 1]).sqrt();
                s[(i, i + 1)] += off;
                s[(i + 1, i)] += off;
            }
        }
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n_theta).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambdas = order
            .iter()
            .map(|&c| snap_null(eig.eigenvalues[c]))
            .collect();
        let vecs = DMatrix::from_fn(n_theta, n_theta, |i, r| eig.eigenvectors[(i, order[r])]);
        (lambdas, vecs)
    };

    let mut reach = (n as f64).sqrt().ceil() as usize + 1;
    let sectors: Vec<(Vec<f64>, DMatrix<f64>)>;
    let mut chosen: Vec<(f64, ModeLabel)>;
    loop {
        let orders = reach.min(max_order);
        let radial = reach.min(n_theta);
        let cache: Vec<_> = (0..=orders).map(sector).collect();
        let mut candidates = Vec::new();
        let mut excluded = f64::INFINITY;
        for (m, (lambdas, _)) in cache.iter().enumerate() {
            for (r, &lambda) in lambdas.iter().enumerate() {
                if r >= radial {
                    excluded = excluded.min(lambda.abs());
                    break;
                }
                let kinds: &[Trig] = if m == 0 {
                    &[Trig::Constant]
                } else {
                    &[Trig::Cos, Trig::Sin]
                };
                for &kind in kinds {
                    candidates.push((
                        lambda,
                        ModeLabel::Sector {
                            order: m as u32,
                            radial: r as u32,
                            kind,
                        },
                    ));
                }
            }
        }
        if orders < max_order {
            excluded = excluded.min(sector(orders + 1).0[0].abs());
        }
        candidates.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1)));
        if candidates.len() < n {
            if orders == max_order && radial == n_theta {
                return Err(Error::BasisTooLarge {
                    requested: n,
                    cap: candidates.len(),
                });
            }
            reach *= 2;
            continue;
        }
        candidates.truncate(n);
        let worst = candidates.last().map(|c| c.0.abs()).unwrap_or(0.0);
        if worst <= excluded || (orders == max_order && radial == n_theta) {
            sectors = cache;
            chosen = candidates;
            break;
        }
        reach *= 2;
    }
    chosen.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1)));

    let mut modes = Vec::with_capacity(n);
    let mut phi_partials = Vec::with_capacity(n);
    for (lambda, label) in chosen {
        let ModeLabel::Sector {
            order,
            radial,
            kind,
        } = label
        else {
            unreachable!()
        };
        let vecs = &sectors[order as usize].1;
        let m = order as f64;
        let theta: Vec<f64> = if order == 0 && radial == 0 {
            // the null vector is exactly constant; drop the eigensolver's rounding
            vec![1.0; n_theta]
        } else {
            (0..n_theta)
                .map(|i| vecs[(i, radial as usize)] / w[i].sqrt())
                .collect()
        };
        let mut values = Array1::zeros(manifold.len());
        let mut dphi = Array1::zeros(manifold.len());
        for p in 0..manifold.len() {
            let [i, _] = manifold.multi_index(p);
            let phi = manifold.coordinate(p)[1];
            let (v, dv) = match kind {
                Trig::Constant => (theta[i], 0.0),
                Trig::Cos => (theta[i] * (m * phi).cos(), -m * theta[i] * (m * phi).sin()),
                Trig::Sin => (theta[i] * (m * phi).sin(), m * theta[i] * (m * phi).cos()),
            };
            values[p] = v;
            dphi[p] = dv;
        }
        let norm = manifold.l2_norm(values.as_slice().expect("contiguous"));
        values /= norm;
        dphi /= norm;
        modes.push((lambda, label, values));
        phi_partials.push((label, dphi));
    }

    let mut basis = assemble_basis(manifold, modes, BasisSource::Discrete, |m, _, v, k| {
        if k == 0 {
            m.partial(v.as_slice().expect("contiguous"), 0)
                .expect("shape")
        } else {
            Array1::zeros(m.len())
        }
    })?;
    for (label, dphi) in phi_partials {
        let j = basis
            .labels
            .iter()
            .position(|l| *l == label)
            .expect("label present");
        basis.partials[1].row_mut(j).assign(&dphi);
    }
    Ok(basis)
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn source(&self) -> BasisSource {
        self.source
    }

    /// Nodal values, one mode per row.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mode(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }

    /// Chart partial derivatives `∂_axis e_j`, one mode per row.
    pub fn partials(&self, axis: usize) -> &Array2<f64> {
        &self.partials[axis]
    }

    /// Largest `|λ_k|`.
    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |a, l| a.max(l.abs()))
    }

    /// Largest Fourier wavenumber along `axis` (torus bases only).
    pub fn max_wavenumber(&self, axis: usize) -> Option<usize> {
        self.labels
            .iter()
            .map(|l| match l {
                ModeLabel::Fourier { wave, .. } => Some(wave[axis].unsigned_abs() as usize),
                _ => None,
            })
            .try_fold(0, |acc, k| k.map(|k| acc.max(k)))
    }

    /// `⟨e_j, e_k⟩_{L²(M)}` under grid quadrature.
    pub fn gram(&self, manifold: &ChartedManifold) -> Array2<f64> {
        let weighted = &self.values * manifold.weights();
        weighted.dot(&self.values.t())
    }

    /// `max_jk |⟨e_j, e_k⟩ − δ_jk|`.
    pub fn orthonormality_defect(&self, manifold: &ChartedManifold) -> f64 {
        let gram = self.gram(manifold);
        gram.indexed_iter()
            .map(|((j, k), g)| (g - if j == k { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// `‖Δ_g e_k − λ_k e_k‖_{L²}` per mode. Analytic torus modes are checked against
    /// the pseudo-spectral Laplacian, discrete modes against the grid operator they
    /// diagonalise.
    pub fn eigen_residuals(&self, manifold: &ChartedManifold) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|k| {
                let e = self.values.row(k).to_owned();
                let e = e.as_slice().expect("contiguous");
                let lap = match self.source {
                    BasisSource::Analytic => manifold.spectral_laplacian(e)?,
                    BasisSource::Discrete => manifold.laplace_beltrami(e)?,
                };
                let r: Vec<f64> = lap
                    .iter()
                    .zip(e)
                    .map(|(l, v)| l - self.eigenvalues[k] * v)
                    .collect();
                Ok(manifold.l2_norm(&r))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus2d() -> ChartedManifold {
        ChartedManifold::torus2d(32, 32).unwrap()
    }

    #[test]
    fn torus_is_flat() {
        let m = torus2d();
        assert!((m.volume() - 4.0 * PI * PI).abs() < 1e-10);
        for p in 0..m.len() {
            assert_eq!(m.christoffel_trace(p), [0.0, 0.0]);
            assert_eq!(m.gramian()[p], 1.0);
        }
    }

    #[test]
    fn sphere_christoffel_is_cot() {
        let m = ChartedManifold::sphere2(32, 64, 0.15).unwrap();
        for p in 0..m.len() {
            let th = m.coordinate(p)[0];
            assert!((m.christoffel_trace(p)[0] - th.cos() / th.sin()).abs() < 1e-12);
            assert_eq!(m.christoffel_trace(p)[1], 0.0);
        }
    }

    #[test]
    fn sphere_band_volume() {
        let m = ChartedManifold::sphere2(64, 128, 0.15).unwrap();
        let exact = 2.0 * PI * (0.15f64.cos() - (PI - 0.15).cos());
        assert!((m.volume() - exact).abs() < 1e-4);
    }

    #[test]
    fn descriptor_errors() {
        let bad = ManifoldDescriptor {
            name: "klein".into(),
            nodes: vec![16],
            theta_min: None,
        };
        assert!(matches!(
            build_manifold(&bad),
            Err(Error::UnknownManifold(_))
        ));
        assert!(matches!(
            ChartedManifold::torus1d(4),
            Err(Error::Resolution { got: 4, min: 8, .. })
        ));
        assert!(matches!(
            ChartedManifold::sphere2(16, 16, 0.0),
            Err(Error::PolarMargin(_))
        ));
        assert!(matches!(
            ChartedManifold::sphere2(16, 16, -0.1),
            Err(Error::PolarMargin(_))
        ));
    }

    #[test]
    fn divergence_examples() {
        let m = torus2d();
        let ones = Array1::from_elem(m.len(), 1.0);
        let c = m
            .divergence(&[ones.clone() * 2.0, ones.clone() * -0.5])
            .unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));

        let x = m
            .divergence(&[m.sample(|x| x[0].sin()), Array1::zeros(m.len())])
            .unwrap();
        let h = m.spacing();
        for p in 0..m.len() {
            assert!((x[p] - m.coordinate(p)[0].cos()).abs() < h * h);
        }
        assert!(matches!(
            m.divergence(&[ones]),
            Err(Error::ComponentCount { .. })
        ));

        let s = ChartedManifold::sphere2(32, 64, 0.15).unwrap();
        let rot = s
            .divergence(&[Array1::zeros(s.len()), Array1::from_elem(s.len(), 1.0)])
            .unwrap();
        assert!(rot.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn gradient_examples() {
        let m = ChartedManifold::torus1d(64).unwrap();
        let g = m
            .gradient(m.sample(|x| x[0].sin()).as_slice().unwrap())
            .unwrap();
        let h = m.spacing();
        for p in 0..m.len() {
            assert!((g[0][p] - m.coordinate(p)[0].cos()).abs() < h * h);
        }

        let s = ChartedManifold::sphere2(64, 32, 0.15).unwrap();
        let g = s
            .gradient(s.sample(|x| x[0].cos()).as_slice().unwrap())
            .unwrap();
        let h = s.axis(0).spacing;
        for p in 0..s.len() {
            let th = s.coordinate(p)[0];
            assert!((g[0][p] + th.sin()).abs() < h * h, "{}", g[0][p] + th.sin());
            assert!(g[1][p].abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_beltrami_examples() {
        let m = torus2d();
        let h = m.spacing();
        let v = m.sample(|x| x[0].sin());
        let lap = m.laplace_beltrami(v.as_slice().unwrap()).unwrap();
        for p in 0..m.len() {
            assert!((lap[p] + v[p]).abs() < h * h);
        }

        let s = ChartedManifold::sphere2(64, 32, 0.15).unwrap();
        let v = s.sample(|x| x[0].cos());
        let lap = s.laplace_beltrami(v.as_slice().unwrap()).unwrap();
        let h = s.axis(0).spacing;
        for p in 0..s.len() {
            let [i, _] = s.multi_index(p);
            // reflecting band edges: the first and last rows see a zero-flux face
            if i > 0 && i + 1 < s.axis(0).nodes {
                assert!((lap[p] + 2.0 * v[p]).abs() < 2.0 * h * h, "row {i}");
            }
        }

        for manifold in [&m, &s] {
            let one = Array1::from_elem(manifold.len(), 1.0);
            let lap = manifold.laplace_beltrami(one.as_slice().unwrap()).unwrap();
            assert!(lap.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn laplacian_integrates_to_zero() {
        let s = ChartedManifold::sphere2(40, 32, 0.2).unwrap();
        let v = s.sample(|x| (3.0 * x[0]).sin() * x[1].cos() + x[0].powi(3));
        let lap = s.laplace_beltrami(v.as_slice().unwrap()).unwrap();
        assert!(s.integrate(lap.as_slice().unwrap()).abs() < 1e-11);
    }

    #[test]
    fn torus1d_first_modes() {
        let m = ChartedManifold::torus1d(16).unwrap();
        let b = build_eigenbasis(&m, 3).unwrap();
        assert_eq!(b.eigenvalues(), &[0.0, -1.0, -1.0]);
        let x = m.coordinate(3)[0];
        assert!((b.mode(0)[3] - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((b.mode(1)[3] - x.cos() / PI.sqrt()).abs() < 1e-14);
        assert!((b.mode(2)[3] - x.sin() / PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn torus2d_gram_is_identity() {
        let m = torus2d();
        let b = build_eigenbasis(&m, 25).unwrap();
        assert!(b.orthonormality_defect(&m) < 1e-8);
        assert!(b.eigen_residuals(&m).unwrap().iter().all(|&r| r < 1e-8));
        let mut sorted = b.eigenvalues().to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(sorted, b.eigenvalues());
    }

    #[test]
    fn basis_errors() {
        let m = ChartedManifold::torus1d(16).unwrap();
        assert!(matches!(
            build_eigenbasis_capped(&m, 10, 8),
            Err(Error::BasisTooLarge {
                requested: 10,
                cap: 8
            })
        ));
        assert!(matches!(build_eigenbasis(&m, 0), Err(Error::EmptyBasis)));
        // 17 modes reach wavenumber 8 which the 16-node grid aliases
        assert!(matches!(
            build_eigenbasis(&m, 17),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn sphere_band_basis_is_orthonormal_eigenbasis() {
        let s = ChartedManifold::sphere2(48, 32, 0.15).unwrap();
        let b = build_eigenbasis(&s, 9).unwrap();
        assert!(b.orthonormality_defect(&s) < 1e-10);
        assert!(b.eigen_residuals(&s).unwrap().iter().all(|&r| r < 1e-9));
        assert_eq!(b.eigenvalues()[0], 0.0);
        let e0 = b.mode(0);
        assert!(e0.iter().all(|v| (v - e0[0]).abs() < 1e-10));
    }

    #[test]
    fn discrete_torus_spectrum_approaches_fourier() {
        let m = ChartedManifold::torus1d(64).unwrap();
        let analytic = build_eigenbasis(&m, 7).unwrap();
        let discrete = build_discrete_eigenbasis(&m, 7).unwrap();
        let h = m.spacing();
        for (a, d) in analytic.eigenvalues().iter().zip(discrete.eigenvalues()) {
            assert!((a - d).abs() <= a.abs().powi(2) * h * h / 12.0 + 1e-10);
        }
        assert!(discrete.orthonormality_defect(&m) < 1e-10);
    }
}
