//! Numerical laboratory for the stochastic scalar conservation law
//!
//! ```text
//! du + Div_g f(x, u) dt = Φ(x, u) dW_t      on a compact Riemannian manifold (M, g)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: single-chart manifolds (flat tori, a latitude band of the round
//!   sphere), metric differential operators and Laplace–Beltrami eigenbases.
//! - [`function_space`]: spectral fields over an eigenbasis and the Sobolev-norm calculus.
//! - [`stochastic`]: reproducible Wiener paths, Itô sums and Monte Carlo checks of the
//!   Itô identities.
//! - [`flux`]: flux fields and noise amplitudes together with checkers for the
//!   divergence-free (geometry compatibility) and growth assumptions.
//! - [`solver`]: the spectral Galerkin SDE system, Euler–Maruyama stepping with an exact
//!   viscous factor, and energy monitors.
//! - [`kinetic`]: kinetic functions, entropy defects, kinetic-measure recovery and the
//!   paired-noise L¹ contraction experiment.

pub mod error;
pub mod flux;
pub mod function_space;
pub mod geometry;
pub mod kinetic;
pub mod solver;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
