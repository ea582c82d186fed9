//! Seeded problem generators with oracles, trace persistence, run settings
//! and the acceptance suite.

pub mod acceptance;
mod generate;
mod spec;
mod trace;

pub use generate::{generate, ista, lasso_objective, random_coupled, Generated, Instance, ORACLE_TOL};
pub use spec::{parse_config, ProblemKind, ProblemSpec, RunSettings, STRESS_NORMS};
pub use trace::{run_traced, Trace, TraceRecord, TRACE_HEADER};
