//! Primal-dual projective splitting solvers.
//!
//! Each iteration evaluates one resolvent of each operator, turns the two
//! resulting graph points into a half-space containing the Kuhn-Tucker set,
//! and moves the primal-dual iterate by a relaxed projection onto it. No
//! operator norm and no linear solve is ever needed.

mod config;
pub mod coupled;
mod pd;

use crate::error::{Error, Result};
use crate::fejer::PDPoint;
use crate::linalg::LinearMap;
use crate::monotone::GraphPoint;

pub use config::{Schedule, SolverConfig, StoppingRule};
pub use pd::{
    alpha_lower_bound, check_selection_quality, conceptual_step, pd_step, selection_lhs, solve,
    solve_normal_cone_free, solve_normal_cone_free_observed, solve_observed, solve_sum,
    solve_sum_observed, solve_with_selector, PDProblem, ResolventSelector, Selector,
};

/// Per-iteration diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiag {
    /// `||s*_n||^2`
    pub s_norm2: f64,
    /// `||t_n||^2`
    pub t_norm2: f64,
    /// `s_norm2 + t_norm2`
    pub tau: f64,
    pub theta: f64,
    /// Distance from the iterate to the half-space.
    pub delta: f64,
    /// `gamma^-1 ||x - a||^2 + mu^-1 ||Lx - b||^2`
    pub numerator: f64,
    /// `||x - a||`
    pub primal_gap: f64,
    /// `||Lx - b||`
    pub dual_gap: f64,
}

impl StepDiag {
    pub fn is_finite(&self) -> bool {
        [
            self.s_norm2,
            self.t_norm2,
            self.tau,
            self.theta,
            self.delta,
            self.numerator,
            self.primal_gap,
            self.dual_gap,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Result of one iteration.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Next iterate; equal to the input when the step terminated.
    pub next: PDPoint,
    pub diag: StepDiag,
    /// Witness `(a_n, a*_n)` in the graph of `A`.
    pub a: GraphPoint,
    /// Witness `(b_n, b*_n)` in the graph of `B`.
    pub b: GraphPoint,
    /// Set when the half-space normal vanished: an exact Kuhn-Tucker point.
    pub solution: Option<PDPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// The half-space normal vanished (within `sigma_tol`) and the witnesses were returned.
    Terminated,
    /// The stopping rule fell below `residual_tol`.
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub point: PDPoint,
    pub iterations: usize,
    pub status: Status,
    pub trace: Vec<StepDiag>,
    /// Kuhn-Tucker residual of `point`.
    pub kt_residual: f64,
    /// Primal objective per iteration, when the problem can evaluate one.
    pub objective: Vec<f64>,
}

impl SolveReport {
    pub fn succeeded(&self) -> bool {
        self.status != Status::MaxIterations
    }
}

/// What an observer sees after every step.
pub struct IterationEvent<'a> {
    pub n: usize,
    /// Iterate the step started from.
    pub point: &'a PDPoint,
    pub step: &'a StepOutput,
    /// Residual of `step.next`, or of the solution on termination.
    pub kt_residual: f64,
}

pub(crate) struct Driver<'a> {
    pub cfg: &'a SolverConfig,
    pub link: &'a LinearMap,
}

impl Driver<'_> {
    pub fn run(
        &self,
        init: PDPoint,
        mut params: impl FnMut(usize) -> Result<(f64, f64, f64)>,
        mut step: impl FnMut(&PDPoint, f64, f64, f64) -> Result<StepOutput>,
        residual: impl Fn(&PDPoint) -> Result<f64>,
        observer: &mut dyn FnMut(&IterationEvent),
    ) -> Result<SolveReport> {
        self.cfg.validate()?;
        let mut p = init;
        let mut trace = Vec::new();
        for n in 0..self.cfg.max_iters {
            let (gamma, mu, lambda) = params(n)?;
            let out = step(&p, gamma, mu, lambda).map_err(|e| at_iteration(e, n))?;
            if !out.diag.is_finite() || !out.next.is_finite() {
                return Err(Error::NonFinite {
                    iteration: n,
                    what: "step",
                });
            }
            if self.cfg.debug_checks {
                self.check_invariants(n, &p, &out)?;
            }
            trace.push(out.diag);

            if let Some(sol) = &out.solution {
                let kt = residual(sol)?;
                observer(&IterationEvent {
                    n,
                    point: &p,
                    step: &out,
                    kt_residual: kt,
                });
                return Ok(SolveReport {
                    point: sol.clone(),
                    iterations: n,
                    status: Status::Terminated,
                    trace,
                    kt_residual: kt,
                    objective: Vec::new(),
                });
            }

            let kt = residual(&out.next)?;
            if !kt.is_finite() {
                return Err(Error::NonFinite {
                    iteration: n,
                    what: "residual",
                });
            }
            observer(&IterationEvent {
                n,
                point: &p,
                step: &out,
                kt_residual: kt,
            });
            let stop = match self.cfg.stopping {
                StoppingRule::KtResidual => kt,
                StoppingRule::Delta => out.diag.delta,
                StoppingRule::CertNorm => out.diag.tau.sqrt(),
            };
            p = out.next;
            if stop <= self.cfg.residual_tol {
                return Ok(SolveReport {
                    point: p,
                    iterations: n + 1,
                    status: Status::Converged,
                    trace,
                    kt_residual: kt,
                    objective: Vec::new(),
                });
            }
        }
        let kt = residual(&p)?;
        Ok(SolveReport {
            point: p,
            iterations: self.cfg.max_iters,
            status: Status::MaxIterations,
            trace,
            kt_residual: kt,
            objective: Vec::new(),
        })
    }

    fn check_invariants(&self, n: usize, p: &PDPoint, out: &StepOutput) -> Result<()> {
        let lhs = selection_lhs(p, &out.a, &out.b, self.link)?;
        let rhs = out.diag.numerator;
        if (lhs - rhs).abs() > 1e-10 * (1.0 + lhs.abs().max(rhs.abs())) {
            return Err(Error::InvariantViolation {
                iteration: n,
                what: format!("step identity: {lhs} != {rhs}"),
            });
        }
        if !check_selection_quality(p, &out.a, &out.b, self.link, 1e-12)? {
            return Err(Error::InvariantViolation {
                iteration: n,
                what: "selection inequality".into(),
            });
        }
        Ok(())
    }
}

fn at_iteration(e: Error, n: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { iteration: n, what },
        other => other,
    }
}

pub(crate) fn no_observer(_: &IterationEvent) {}
