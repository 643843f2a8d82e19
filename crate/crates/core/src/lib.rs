//! Normalized solutions of a radial weighted NLS with Caffarelli-Kohn-Nirenberg
//! weights and a Sobolev-critical term.
//!
//! Profiles live on a log-uniform radial grid. Energies, Pohozaev functionals
//! and fiber maps are evaluated in closed form from three integrals, and the
//! solver minimizes on the intersection of the mass sphere and the Pohozaev
//! manifold.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod descent;
pub mod error;
pub mod extremals;
pub mod fiber;
pub mod cli;
pub mod functionals;
pub mod grid;
pub mod json;
pub mod params;
pub mod solver;

pub use error::{CknError, Result};
pub use fiber::{analyze_fiber, Branch, FiberReport};
pub use functionals::{energy, fiber_coefficients, pohozaev, FiberCoefficients, SolutionReport};
pub use grid::{make_grid, GridSpec, RadialFunction, RadialGrid};
pub use params::{derive_exponents, thresholds, validate, Exponents, ProblemParams, Regime};
