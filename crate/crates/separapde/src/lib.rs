//! Separated-representation solvers for Poisson-type problems on
//! tensor-product meshes.
//!
//! The crate provides, behind one shared mesh/assembly layer:
//!
//! - a full FEM baseline solved through per-axis eigendecompositions,
//! - canonical decomposition (CD) with all modes optimized jointly,
//! - incremental PGD built one mode at a time by alternating direction,
//! - r-adaptive variants that co-optimize nodal positions with Adam
//!   (per-axis mesh adaptivity for both the full field and the separated
//!   representation),
//! - PGD on mapped irregular 2D domains via an SVD-separated metric,
//! - an analysis harness for error tables, convergence slopes, error
//!   decomposition, and mode-count selection, plus a small CLI.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod adaptive;
pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mapping;
pub mod mesh;
pub mod optimizer;
pub mod problems;
pub mod separated;
pub mod source;

pub use error::{Error, Result};
pub use fem::{energy, energy_norm_error, solve_fem, EnergyValue, FemSolver, NodalField};
pub use mesh::{build_uniform_grid, Grid1D, ShapeSupport, TensorMesh};

pub use source::{AxisFn, SourceTerm};
