use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MonotoneOp;
use crate::error::{Error, Result};
use crate::linalg::{BlockVector, Shape};

/// Library of operators with closed-form (or dense) resolvents.
#[derive(Clone, Debug)]
pub enum ProxSpec {
    /// `weight * ||.||_1`; resolvent is soft-thresholding at `gamma * weight`.
    L1 { dim: usize, weight: f64 },
    /// `1/2 ||.||^2`; resolvent `w / (1 + gamma)`.
    SqL2 { dim: usize },
    /// Indicator of the box `[lo, hi]`; resolvent is the clamp.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `x -> M x + c` with monotone `M`; resolvent by dense solve.
    Affine { matrix: DMatrix<f64>, offset: Vec<f64> },
}

pub fn prox_library(spec: ProxSpec) -> Result<MonotoneOp> {
    match spec {
        ProxSpec::L1 { dim, weight } => {
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(Error::Construction(format!("l1 weight must be nonnegative, got {weight}")));
            }
            Ok(MonotoneOp::from_resolvent(Shape::single(dim), move |g, w| {
                let thr = g * weight;
                w.map(|a| a.signum() * (a.abs() - thr).max(0.0))
            }))
        }
        ProxSpec::SqL2 { dim } => Ok(MonotoneOp::identity(&Shape::single(dim))),
        ProxSpec::Box { lo, hi } => {
            if lo.len() != hi.len() {
                return Err(Error::Construction("box bounds differ in length".into()));
            }
            if let Some(i) = lo.iter().zip(&hi).position(|(l, h)| !(l <= h)) {
                return Err(Error::Construction(format!("box bound {i}: lo > hi")));
            }
            let shape = Shape::single(lo.len());
            Ok(MonotoneOp::from_resolvent(shape, move |_, w| {
                let data = w
                    .as_slice()
                    .iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(&a, (&l, &h))| a.clamp(l, h))
                    .collect();
                BlockVector::from_vec(data)
            }))
        }
        ProxSpec::Affine { matrix, offset } => {
            let n = matrix.nrows();
            if matrix.ncols() != n || offset.len() != n {
                return Err(Error::Construction(format!(
                    "affine operator needs a square matrix and matching offset, got {}x{} and {}",
                    matrix.nrows(),
                    matrix.ncols(),
                    offset.len()
                )));
            }
            let sym = (&matrix + matrix.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
            if n > 0 && min_eig < -1e-10 {
                return Err(Error::Construction(format!(
                    "affine operator is not monotone: symmetric part has eigenvalue {min_eig}"
                )));
            }
            let c = DVector::from_vec(offset);
            Ok(MonotoneOp::from_resolvent(Shape::single(n), move |g, w| {
                let system = DMatrix::<f64>::identity(n, n) + &matrix * g;
                let rhs = DVector::from_column_slice(w.as_slice()) - &c * g;
                let p = system
                    .lu()
                    .solve(&rhs)
                    .expect("Id + gamma M is invertible for monotone M");
                BlockVector::from_vec(p.as_slice().to_vec())
            }))
        }
    }
}

impl MonotoneOp {
    pub fn l1(dim: usize, weight: f64) -> MonotoneOp {
        prox_library(ProxSpec::L1 { dim, weight }).expect("valid l1 weight")
    }

    pub fn sq_l2(dim: usize) -> MonotoneOp {
        MonotoneOp::identity(&Shape::single(dim))
    }

    pub fn box_indicator(lo: Vec<f64>, hi: Vec<f64>) -> Result<MonotoneOp> {
        prox_library(ProxSpec::Box { lo, hi })
    }

    pub fn affine(matrix: DMatrix<f64>, offset: Vec<f64>) -> Result<MonotoneOp> {
        prox_library(ProxSpec::Affine { matrix, offset })
    }
}

type ValueFn = dyn Fn(&BlockVector) -> f64 + Send + Sync;

/// A convex function known through its proximity operator, optionally with
/// an evaluator for objective tracking.
#[derive(Clone)]
pub struct ProxFunction {
    prox: MonotoneOp,
    value: Option<Arc<ValueFn>>,
}

impl fmt::Debug for ProxFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProxFunction")
            .field("shape", self.prox.shape())
            .field("has_value", &self.value.is_some())
            .finish()
    }
}

impl ProxFunction {
    /// `prox` is the resolvent of the subdifferential, i.e. `prox_{gamma f}`.
    pub fn from_prox(prox: MonotoneOp) -> Self {
        ProxFunction { prox, value: None }
    }

    pub fn with_value(
        prox: MonotoneOp,
        value: impl Fn(&BlockVector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ProxFunction {
            prox,
            value: Some(Arc::new(value)),
        }
    }

    pub fn zero(dim: usize) -> Self {
        ProxFunction::with_value(MonotoneOp::zero(&Shape::single(dim)), |_| 0.0)
    }

    pub fn l1(dim: usize, weight: f64) -> Self {
        ProxFunction::with_value(MonotoneOp::l1(dim, weight), move |x| {
            weight * x.as_slice().iter().map(|a| a.abs()).sum::<f64>()
        })
    }

    pub fn sq_l2(dim: usize) -> Self {
        ProxFunction::with_value(MonotoneOp::sq_l2(dim), |x| 0.5 * x.norm_sq())
    }

    pub fn box_indicator(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let op = MonotoneOp::box_indicator(lo.clone(), hi.clone())?;
        Ok(ProxFunction::with_value(op, move |x| {
            let inside = x
                .as_slice()
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(&a, (&l, &h))| l <= a && a <= h);
            if inside {
                0.0
            } else {
                f64::INFINITY
            }
        }))
    }

    pub fn subdifferential(&self) -> &MonotoneOp {
        &self.prox
    }

    pub fn shape(&self) -> &Shape {
        self.prox.shape()
    }

    pub fn value(&self, x: &BlockVector) -> Option<f64> {
        self.value.as_ref().map(|f| f(x))
    }

    pub fn has_value(&self) -> bool {
        self.value.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> BlockVector {
        BlockVector::scalar(x)
    }

    #[test]
    fn abs_value_resolvent_matches_grid_minimizer() {
        // argmin_t |t| + (t - 3)^2 / 2 on a fine grid
        let grid_min = (0..=600_000)
            .map(|k| -1.0 + k as f64 * 1e-5)
            .map(|t| (t, t.abs() + 0.5 * (t - 3.0) * (t - 3.0)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((grid_min - 2.0).abs() < 1e-4);
        let gp = MonotoneOp::l1(1, 1.0).resolve(1.0, &scalar(3.0)).unwrap();
        assert_eq!(gp.point().as_slice(), &[2.0]);
        assert_eq!(gp.image().as_slice(), &[1.0]);
    }

    #[test]
    fn library_values() {
        assert_eq!(MonotoneOp::l1(1, 1.0).resolvent(1.0, &scalar(0.5)).unwrap().as_slice(), &[0.0]);
        assert_eq!(MonotoneOp::sq_l2(1).resolvent(3.0, &scalar(8.0)).unwrap().as_slice(), &[2.0]);
        let bx = MonotoneOp::box_indicator(vec![-1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(
            bx.resolvent(5.0, &BlockVector::from_vec(vec![3.0, -2.0])).unwrap().as_slice(),
            &[1.0, 0.0]
        );
        // (1 + 2) p = 4 - 1
        let aff = MonotoneOp::affine(DMatrix::from_element(1, 1, 2.0), vec![1.0]).unwrap();
        assert_eq!(aff.resolvent(1.0, &scalar(4.0)).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn skew_affine_is_accepted_and_nonmonotone_rejected() {
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(MonotoneOp::affine(skew, vec![0.0, 0.0]).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(MonotoneOp::affine(bad, vec![0.0, 0.0]), Err(Error::Construction(_))));
        assert!(MonotoneOp::affine(DMatrix::zeros(2, 3), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MonotoneOp::box_indicator(vec![1.0], vec![0.0]).is_err());
        assert!(MonotoneOp::box_indicator(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(prox_library(ProxSpec::L1 { dim: 2, weight: -1.0 }).is_err());
    }

    #[test]
    fn function_values() {
        let x = BlockVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(ProxFunction::l1(2, 0.5).value(&x), Some(1.5));
        assert_eq!(ProxFunction::sq_l2(2).value(&x), Some(2.5));
        assert_eq!(ProxFunction::zero(2).value(&x), Some(0.0));
        let bx = ProxFunction::box_indicator(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(bx.value(&x), Some(f64::INFINITY));
        assert_eq!(ProxFunction::from_prox(MonotoneOp::sq_l2(2)).value(&x), None);
    }
}
