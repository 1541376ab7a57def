//! Penalized Maxwell cavity eigenvalues with matrix-valued permittivity on
//! box domains, derivatives of symmetric functions of the eigenvalues with
//! respect to the permittivity, and mass-constrained permittivity
//! optimization.

pub mod assembly;
pub mod config;
pub mod experiments;
pub mod auchmuty;
pub mod cli;
pub mod classification;
pub mod eigensolver;
pub mod error;
pub mod fem;
pub mod grid;
pub mod optimizer;
pub mod par;
pub mod permittivity;
pub mod sparse;
pub mod spectral_calculus;
pub mod sym3;

pub use error::{Error, Result};
pub use grid::{BoxDomain, DofKind, DofSpace, Grid, GridSpec};
pub use permittivity::{AdmissibilityBounds, MassConstraint, SymMatrixField};
pub use sym3::Sym3;
