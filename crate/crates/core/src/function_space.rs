//! Galerkin fields: coefficient vectors over an eigenbasis, projection, Sobolev norms.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use ndarray::Array1;

use crate::geometry::{ChartedManifold, EigenBasis};
use crate::{Error, Result};

/// `u_N = Σ_k α_k e_k`. Nodal values are computed lazily and cached.
#[derive(Clone, Debug)]
pub struct SpectralField {
    coeffs: Array1<f64>,
    basis: Arc<EigenBasis>,
    nodal: OnceLock<Array1<f64>>,
}

impl SpectralField {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Array1<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::Shape {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            coeffs,
            basis,
            nodal: OnceLock::new(),
        })
    }

    pub fn zeros(basis: Arc<EigenBasis>) -> Self {
        let coeffs = Array1::zeros(basis.len());
        Self {
            coeffs,
            basis,
            nodal: OnceLock::new(),
        }
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }

    /// Mutable coefficients; drops the nodal cache.
    pub fn coeffs_mut(&mut self) -> &mut Array1<f64> {
        self.nodal = OnceLock::new();
        &mut self.coeffs
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn nodal(&self) -> &Array1<f64> {
        self.nodal
            .get_or_init(|| self.basis.values().t().dot(&self.coeffs))
    }

    pub fn into_coeffs(self) -> Array1<f64> {
        self.coeffs
    }
}

/// `α_k = ⟨u, e_k⟩` by grid quadrature. Nodal data is the only input form; closures
/// can be sampled with [`ChartedManifold::sample`].
pub fn project(
    manifold: &ChartedManifold,
    basis: &Arc<EigenBasis>,
    nodal: &[f64],
) -> Result<SpectralField> {
    if nodal.len() != manifold.len() {
        return Err(Error::Shape {
            expected: manifold.len(),
            got: nodal.len(),
        });
    }
    let weighted: Array1<f64> = nodal
        .iter()
        .zip(manifold.weights())
        .map(|(v, w)| v * w)
        .collect();
    SpectralField::new(basis.clone(), basis.values().dot(&weighted))
}

/// Sobolev index `s ∈ {−1, 0, 1}` for the spectral norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SobolevIndex(i32);

impl SobolevIndex {
    pub const H_MINUS_ONE: Self = Self(-1);
    pub const L2: Self = Self(0);
    pub const H_ONE: Self = Self(1);

    pub fn new(s: i32) -> Result<Self> {
        if (-1..=1).contains(&s) {
            Ok(Self(s))
        } else {
            Err(Error::SobolevIndex(s))
        }
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

/// `(Σ_k max(|λ_k|, 1)^s α_k²)^{1/2}`. The floor at 1 keeps the mean mode in the
/// negative-order norm.
pub fn sobolev_norm(field: &SpectralField, s: SobolevIndex) -> f64 {
    field
        .basis()
        .eigenvalues()
        .iter()
        .zip(field.coeffs())
        .map(|(l, a)| l.abs().max(1.0).powi(s.0) * a * a)
        .sum::<f64>()
        .sqrt()
}

/// Clamp to `[−N, N]`, applied to nodal values.
pub fn truncate(nodal: &[f64], level: f64) -> Result<Array1<f64>> {
    if !(level > 0.0) {
        return Err(Error::TruncationLevel(level));
    }
    Ok(nodal.iter().map(|v| v.clamp(-level, level)).collect())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows `t,k,alpha` for each snapshot.
pub fn write_coefficients_csv<W: Write>(
    out: W,
    times: &[f64],
    coeffs: &[Array1<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "k", "alpha"])?;
    for (t, alpha) in times.iter().zip(coeffs) {
        for (k, a) in alpha.iter().enumerate() {
            w.write_record([fmt(*t), k.to_string(), fmt(*a)])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows `t,node,u` for each snapshot.
pub fn write_nodal_csv<W: Write>(out: W, times: &[f64], nodal: &[Array1<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "node", "u"])?;
    for (t, u) in times.iter().zip(nodal) {
        for (p, v) in u.iter().enumerate() {
            w.write_record([fmt(*t), p.to_string(), fmt(*v)])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
