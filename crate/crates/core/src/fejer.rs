//! Half-spaces containing the Kuhn-Tucker set, built from one graph point of
//! each operator, and the relaxed projections onto them.
//!
//! For `(a, a*)` in the graph of `A` and `(b, b*)` in the graph of `B`, every
//! Kuhn-Tucker point `(x, v)` satisfies
//!
//! ```text
//! <x, a* + L* b*> + <v, b - L a>  <=  <a, a*> + <b, b*>
//! ```
//!
//! so projecting onto this half-space never moves an iterate away from the
//! solution set.

use crate::error::{Error, Result};
use crate::linalg::{BlockVector, LinearMap};
use crate::monotone::{GraphPoint, MonotoneOp};

/// A primal-dual pair `(x, v)` in `H (+) G`.
#[derive(Clone, Debug, PartialEq)]
pub struct PDPoint {
    pub x: BlockVector,
    pub v: BlockVector,
}

impl PDPoint {
    pub fn new(x: BlockVector, v: BlockVector) -> Self {
        PDPoint { x, v }
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_sq() + self.v.norm_sq()).sqrt()
    }

    pub fn dist(&self, other: &PDPoint) -> Result<f64> {
        let dx = self.x.dist(&other.x)?;
        let dv = self.v.dist(&other.v)?;
        Ok((dx * dx + dv * dv).sqrt())
    }

    /// Largest coordinate-wise difference over both components.
    pub fn max_abs_diff(&self, other: &PDPoint) -> Result<f64> {
        Ok(self.x.max_abs_diff(&other.x)?.max(self.v.max_abs_diff(&other.v)?))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }

    /// `self - step * (dx, dv)`
    pub(crate) fn moved(&self, step: f64, dx: &BlockVector, dv: &BlockVector) -> Result<PDPoint> {
        let mut x = self.x.clone();
        x.axpy(-step, dx)?;
        let mut v = self.v.clone();
        v.axpy(-step, dv)?;
        Ok(PDPoint { x, v })
    }
}

/// The half-space `{ (x, v) : <x, s_primal> + <v, s_dual> <= eta }`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpaceCert {
    pub s_primal: BlockVector,
    pub s_dual: BlockVector,
    pub eta: f64,
}

impl HalfSpaceCert {
    pub fn sigma(&self) -> f64 {
        (self.s_primal.norm_sq() + self.s_dual.norm_sq()).sqrt()
    }

    /// `<x, s_primal> + <v, s_dual>`
    pub fn lhs(&self, p: &PDPoint) -> Result<f64> {
        Ok(p.x.inner(&self.s_primal)? + p.v.inner(&self.s_dual)?)
    }

    pub fn contains(&self, p: &PDPoint, tol: f64) -> Result<bool> {
        Ok(self.lhs(p)? <= self.eta + tol)
    }
}

/// `s_primal = a* + L* b*`, `s_dual = b - L a`, `eta = <a, a*> + <b, b*>`.
pub fn build_halfspace(a: &GraphPoint, b: &GraphPoint, l: &LinearMap) -> Result<HalfSpaceCert> {
    let s_primal = a.image().add(&l.apply_adjoint(b.image())?)?;
    let s_dual = b.point().sub(&l.apply(a.point())?)?;
    let eta = a.point().inner(a.image())? + b.point().inner(b.image())?;
    Ok(HalfSpaceCert {
        s_primal,
        s_dual,
        eta,
    })
}

/// Exact projection onto the half-space. Returns the projection and its
/// distance `delta` from `p` (zero when `p` is already inside or the normal
/// vanishes).
pub fn project_halfspace(p: &PDPoint, h: &HalfSpaceCert) -> Result<(PDPoint, f64)> {
    let sigma = h.sigma();
    if sigma == 0.0 {
        p.x.shape().ensure_eq(h.s_primal.shape())?;
        p.v.shape().ensure_eq(h.s_dual.shape())?;
        return Ok((p.clone(), 0.0));
    }
    let delta = (h.lhs(p)? - h.eta) / sigma;
    if delta <= 0.0 {
        return Ok((p.clone(), 0.0));
    }
    let proj = p.moved(delta / sigma, &h.s_primal, &h.s_dual)?;
    Ok((proj, delta))
}

/// `p + lambda (P_H p - p)` for `lambda` in `]0, 2[`.
pub fn relaxed_step(p: &PDPoint, h: &HalfSpaceCert, lambda: f64) -> Result<PDPoint> {
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation must lie in ]0, 2[, got {lambda}"
        )));
    }
    let sigma = h.sigma();
    if sigma == 0.0 {
        return project_halfspace(p, h).map(|(q, _)| q);
    }
    let delta = (h.lhs(p)? - h.eta) / sigma;
    if delta <= 0.0 {
        return Ok(p.clone());
    }
    p.moved(lambda * delta / sigma, &h.s_primal, &h.s_dual)
}

/// Natural residual of the Kuhn-Tucker inclusions with unit resolvent parameters:
///
/// `sqrt(||x - J_A(x - L* v)||^2 + ||L x - J_B(L x + v)||^2)`,
///
/// which vanishes exactly on the Kuhn-Tucker set.
pub fn kt_residual(p: &PDPoint, a: &MonotoneOp, b: &MonotoneOp, l: &LinearMap) -> Result<f64> {
    let lv = l.apply_adjoint(&p.v)?;
    let ja = a.resolvent(1.0, &p.x.sub(&lv)?)?;
    let primal = p.x.dist(&ja)?;
    let lx = l.apply(&p.x)?;
    let jb = b.resolvent(1.0, &lx.add(&p.v)?)?;
    let dual = lx.dist(&jb)?;
    Ok((primal * primal + dual * dual).sqrt())
}
