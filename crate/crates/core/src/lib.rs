//! Fejér-monotone primal-dual projective splitting.
//!
//! Solves composite monotone inclusions `0 in A x + L* B L x` and coupled
//! systems of them by projecting the primal-dual iterate onto half-spaces that
//! contain the Kuhn-Tucker set. Operators are accessed only through their
//! resolvents, and linear maps only through forward and adjoint application:
//! no norm estimate or linear solve is required.
//!
//! - [`linalg`]: block vectors and norm-free linear maps
//! - [`monotone`]: resolvent-based operators and the proximity library
//! - [`fejer`]: half-space construction and relaxed projections
//! - [`solver`]: the two-operator and coupled solvers
//! - [`harness`]: seeded problem generators, oracles, traces, acceptance checks

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fejer;
pub mod harness;
pub mod linalg;
pub mod monotone;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use fejer::{build_halfspace, kt_residual, project_halfspace, relaxed_step, HalfSpaceCert, PDPoint};
pub use linalg::{block_matrix_map, check_adjoint, BlockVector, LinearMap, Shape};
pub use monotone::{prox_library, GraphPoint, MonotoneOp, ProxFunction, ProxSpec};
pub use solver::coupled::{
    coupled_solve, coupled_step, reduce_to_pd, solve_min, CoupledPoint, CoupledProblem, MinProblem,
};
pub use solver::{
    pd_step, solve, solve_normal_cone_free, solve_sum, PDProblem, SolveReport, SolverConfig, Status,
    StepDiag,
};
