//! Recovery of the solution operator of an unknown elliptic PDE from
//! forcing/solution pairs.
//!
//! The operator `u = F(f)` of a uniformly elliptic problem
//! `-div(a(x) grad u) = f` with zero Dirichlet boundary data is an integral
//! operator whose kernel (the Green's function) is hierarchically low-rank:
//! restricted to well-separated boxes of the domain it has rapidly decaying
//! singular values. This crate exploits that structure to rebuild the operator
//! from nothing but black-box solves:
//!
//! * [`grid`], [`coeff`], [`operator`] — uniform grids on the unit box, flux-form
//!   finite-difference discretizations, and the forcing→solution oracle with
//!   dense test kernels for small problems.
//! * [`sampling`] — Gaussian-process forcing terms (covariance factorization,
//!   reproducible draws, masking) and a labeled data-quality proxy.
//! * [`hier`] — dyadic box trees over the index lattice, strong-admissibility
//!   block lists, and colorings that let many blocks share one solve.
//! * [`lowrank`] — randomized SVD of a block seen only through applications,
//!   with oversampling, adaptive rank selection, and two-sided sketches.
//! * [`peel`] — the level-by-level reconstruction: probe, subtract what is
//!   already known, compress what remains, tighten tolerances per level.
//! * [`evaluate`] — exact (dense) and sampled error metrics, near-field mass
//!   floors, and a non-hierarchical baseline for contrast experiments.

pub mod approx;
pub mod coeff;
pub mod error;
pub mod evaluate;
pub mod field;
pub mod grid;
pub mod hier;
pub mod ledger;
pub mod lowrank;
pub mod operator;
pub mod peel;
pub mod sampling;
pub mod schedule;
pub mod streams;

pub use approx::HierarchicalApprox;
pub use coeff::CoefficientField;
pub use error::Error;
pub use field::{FieldRole, FieldVector};
pub use grid::Grid;
pub use hier::{BlockList, BoxTree, Coloring};
pub use ledger::SolveLedger;
pub use operator::DiscreteOperator;
pub use peel::{learn, PeelConfig, SolveOracle, TrainingSet};
pub use sampling::{CovarianceFactor, KernelSpec};

/// Convenient alias used throughout: all numerics are double precision.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector alias.
pub type Vector = nalgebra::DVector<f64>;
