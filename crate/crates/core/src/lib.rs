//! Numerical toolkit for multi-point blow-up configurations of the singular
//! Liouville equation `-Δu = ε² e^u - 4π Σ α_p δ_p` with Dirichlet data.

pub mod ansatz;
pub mod cli;
pub mod configsearch;
pub mod domain;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod green;
pub mod grid;
pub mod pdesolver;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{pt, Point};
