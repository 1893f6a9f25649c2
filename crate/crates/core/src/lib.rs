//! Spectral (Galerkin) variational integrators for Lagrangian systems.
//!
//! A step approximates the exact discrete Lagrangian by extremizing the
//! quadrature action over polynomials of degree `n − 1` interpolating at
//! Chebyshev points, giving a symplectic, momentum-preserving one-step map
//! with a polynomial (Galerkin) curve as dense output.

pub mod basis;
pub mod curve;
pub mod diagnostics;
pub mod error;
pub mod problems;
pub mod quadrature;
pub mod stepper;
pub mod system;

pub use basis::{BasisTable, ChebyshevNodes};
pub use curve::{sobolev_error, sup_error, GalerkinCurve, StepStats, SupError, Trajectory};
pub use diagnostics::{
    discrete_noether_series, energy_series, fit_geometric, fit_order, noether_series, RateFit, SeriesReport,
};
pub use error::{Error, Result};
pub use problems::{NBodyConfig, Problem, Reference};
pub use quadrature::QuadratureRule;
pub use stepper::{
    GalerkinCoefficients, IntegrationFailure, PhaseState, SolverConfig, SolverStrategy, SpectralIntegrator,
    StepResult,
};
pub use system::{CanonicalLagrangian, Lagrangian, NoetherGenerator, Potential};
