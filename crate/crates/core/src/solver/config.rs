use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A parameter sequence `n -> value`.
#[derive(Clone)]
pub enum Schedule {
    Constant(f64),
    Sequence(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl Schedule {
    pub fn from_fn(f: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        Schedule::Sequence(Arc::new(f))
    }

    pub fn at(&self, n: usize) -> f64 {
        match self {
            Schedule::Constant(c) => *c,
            Schedule::Sequence(f) => f(n),
        }
    }
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(c) => write!(f, "Constant({c})"),
            Schedule::Sequence(_) => f.write_str("Sequence(..)"),
        }
    }
}

/// Which quantity decides convergence after each non-terminating step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StoppingRule {
    /// Natural Kuhn-Tucker residual of the new iterate.
    #[default]
    KtResidual,
    /// Distance from the iterate to the constructed half-space.
    Delta,
    /// Norm of the half-space normal, `sqrt(tau)`.
    CertNorm,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Range parameter: resolvent scalings stay in `[eps, 1/eps]`, relaxations in `[eps, 2 - eps]`.
    pub epsilon: f64,
    pub gamma: Schedule,
    pub mu: Schedule,
    pub lambda: Schedule,
    pub max_iters: usize,
    /// Relative threshold for the exact-termination branch: stop when
    /// `sqrt(tau) <= sigma_tol * (1 + ||p|| + ||x||/gamma + ||L* v|| + ||L x||/mu + ||v||)`,
    /// the magnitude of the terms `s` and `t` are computed from.
    pub sigma_tol: f64,
    pub residual_tol: f64,
    pub stopping: StoppingRule,
    /// Check the selection inequality and the step identity at every iteration.
    pub debug_checks: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-3,
            gamma: Schedule::Constant(1.0),
            mu: Schedule::Constant(1.0),
            lambda: Schedule::Constant(1.8),
            max_iters: 100_000,
            sigma_tol: 1e-14,
            residual_tol: 1e-8,
            stopping: StoppingRule::KtResidual,
            debug_checks: false,
        }
    }
}

impl SolverConfig {
    pub fn with_params(mut self, gamma: f64, mu: f64, lambda: f64) -> Self {
        self.gamma = Schedule::Constant(gamma);
        self.mu = Schedule::Constant(mu);
        self.lambda = Schedule::Constant(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in ]0, 1[, got {}",
                self.epsilon
            )));
        }
        if !(self.sigma_tol >= 0.0 && self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerances must be nonnegative".into()));
        }
        Ok(())
    }

    /// `(gamma_n, mu_n, lambda_n)`, each checked against its admissible range.
    pub fn params(&self, n: usize) -> Result<(f64, f64, f64)> {
        let eps = self.epsilon;
        let (g, m, l) = (self.gamma.at(n), self.mu.at(n), self.lambda.at(n));
        for (name, val) in [("gamma", g), ("mu", m)] {
            if !(val >= eps && val <= 1.0 / eps) {
                return Err(Error::InvalidParameter(format!(
                    "{name}_{n} = {val} outside [{eps}, {}]",
                    1.0 / eps
                )));
            }
        }
        if !(l >= eps && l <= 2.0 - eps) {
            return Err(Error::InvalidParameter(format!(
                "lambda_{n} = {l} outside [{eps}, {}]",
                2.0 - eps
            )));
        }
        Ok((g, m, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameters_are_admissible() {
        let cfg = SolverConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.params(0).unwrap(), (1.0, 1.0, 1.8));
    }

    #[test]
    fn out_of_range_schedules_rejected() {
        let cfg = SolverConfig::default().with_params(1e-4, 1.0, 1.0);
        assert!(cfg.params(0).is_err());
        let cfg = SolverConfig::default().with_params(1.0, 1.0, 2.0);
        assert!(cfg.params(0).is_err());
        let mut cfg = SolverConfig {
            gamma: Schedule::from_fn(|n| if n < 3 { 1.0 } else { f64::NAN }),
            ..SolverConfig::default()
        };
        assert!(cfg.params(2).is_ok());
        assert!(cfg.params(3).is_err());
        cfg.epsilon = 1.0;
        assert!(cfg.validate().is_err());
    }
}
