//! Numerical laboratory for the geometry of totally geodesic Sasakian
//! foliations under the canonical variation g_eps = g_H + (1/eps) g_V.
//!
//! The crate integrates g_eps-geodesics and sub-Riemannian normal geodesics
//! on the three constant-curvature model spaces (Heisenberg groups, the Hopf
//! sphere S^3, anti-de Sitter AdS_3), propagates Jacobi fields for the
//! adjoint connection, measures Hessians and Laplacians of the distance
//! function, and verifies the horizontal/vertical comparison bounds, diameter
//! and injectivity estimates, and measure contraction properties against
//! independently computed geodesic data.

pub mod comparison;
pub mod geodesics;
pub mod jacobi;
pub mod kernels;
pub mod mcp;
pub mod models;
pub mod ode;
pub mod quad;
pub mod report;
pub mod sampling;
pub mod shooting;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} has a singularity at r = {pole}, got r = {r}")]
    PastPole { what: &'static str, pole: f64, r: f64 },
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("frame vectors based at different points")]
    MismatchedBasePoints,
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("integrator step underflow at t = {t} (|h| = {h:.3e}), state {state:?}")]
    StepUnderflow { t: f64, h: f64, state: Vec<f64> },
    #[error("integrator exceeded {0} steps")]
    MaxSteps(usize),
    #[error("point left the chart window (|omega| = {omega:.4} >= 2*pi)")]
    ChartWindow { omega: f64 },
    #[error("shooting did not converge: best residual {best_residual:.3e} after {iterations} iterations")]
    NoConvergence { best_residual: f64, iterations: usize },
    #[error("point is flagged ({0}); comparison theorems only hold off the cut locus")]
    CutLocus(&'static str),
    #[error("fundamental Jacobi matrix is rank-deficient (sigma_min = {sigma_min:.3e}): conjugate point")]
    ConjugateSingularity { sigma_min: f64 },
    #[error("Monte Carlo sample starvation: relative error {rel_err:.3e} above target {target:.3e}")]
    SampleStarvation { rel_err: f64, target: f64 },
    #[error("monotonicity violation in the eps-continuation: d({eps_coarse}) = {d_coarse} > d({eps_fine}) = {d_fine}")]
    MonotonicityViolation { eps_coarse: f64, d_coarse: f64, eps_fine: f64, d_fine: f64 },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
