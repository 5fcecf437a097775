//! Twisted constant-scalar-curvature Kähler potentials on flat complex tori.
//!
//! Potentials are sampled on uniform periodic grids over `ℂⁿ/(2πℤ)^{2n}` with
//! `n ∈ {1, 2}`. All differential operators are spectral.

pub mod flows;
pub mod functionals;
pub mod geodesic;
pub mod grid;
pub mod kahler;
pub mod krylov;
pub mod linop;
pub mod mat;
pub mod quadrature;
pub mod solver;

pub use functionals::{ClassConstants, EnergyReport, FunctionalError, Functionals, PathQuadrature};
pub use grid::{GridError, ScalarField, TorusGrid};
pub use kahler::{HermitianFormField, KahlerError, KahlerState};
