//! Numerical laboratory for gradient estimates and Harnack inequalities of positive
//! solutions to nonlinear heat equations under Ricci flow.
//!
//! The pieces are:
//!
//! * [`params`]: admissible (α, φ, γ) families and their condition checks,
//! * [`geometry`]: model Ricci flows (flat torus, shrinking round sphere),
//! * [`solver`]: a method-of-lines solver producing positive space-time fields,
//! * [`estimates`]: gradient-estimate right-hand sides evaluated on a field,
//! * [`harnack`]: Harnack factors along space-time paths.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= lo)` also rejects NaN

pub mod error;
pub mod estimates;
pub mod geometry;
pub mod harnack;
pub mod params;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{LabError, Result};
pub use geometry::{GeometryKind, ModelGeometry, SpatialGrid, Topology};
pub use params::{check_conditions, ConditionReport, Family, ParamTriple, ParamValues};
pub use solver::{solve, Deltas, SolutionField, SolveParams, Source, SourceProfile};
pub use estimates::{verify, EstimateInstance, EstimateReport, Region, Theorem};
pub use harnack::{verify_harnack, HarnackInstance, HarnackKind, HarnackReport, SpaceTimePath};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
