//! Maximally monotone operators, accessed only through their resolvents.

mod prox;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{BlockVector, Shape};

pub use prox::{prox_library, ProxFunction, ProxSpec};

type ResolventFn = dyn Fn(f64, &BlockVector) -> BlockVector + Send + Sync;

/// A maximally monotone operator `A`, represented by `(gamma, w) -> J_{gamma A}(w)`
/// where `J_{gamma A} = (Id + gamma A)^{-1}`.
#[derive(Clone)]
pub struct MonotoneOp {
    shape: Shape,
    resolvent: Arc<ResolventFn>,
}

impl fmt::Debug for MonotoneOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneOp")
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

/// A pair `(point, image)` in the graph of an operator, certified by
/// construction: `point = J_{gamma A}(w)` and `image = (w - point) / gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPoint {
    point: BlockVector,
    image: BlockVector,
}

impl GraphPoint {
    /// Builds a pair without any graph certificate. Only meant for probing
    /// checks with arbitrary data; solvers never call this.
    pub fn new_unchecked(point: BlockVector, image: BlockVector) -> Result<Self> {
        point.shape().ensure_eq(image.shape())?;
        Ok(GraphPoint { point, image })
    }

    /// `(point, 0)`, which lies in the graph of the zero operator.
    pub(crate) fn of_zero_operator(point: BlockVector) -> Self {
        let image = BlockVector::zeros(point.shape());
        GraphPoint { point, image }
    }

    /// Graph point of a product operator assembled from per-block graph points.
    pub(crate) fn concat(parts: &[GraphPoint]) -> Self {
        GraphPoint {
            point: BlockVector::concat(parts.iter().map(|g| &g.point)),
            image: BlockVector::concat(parts.iter().map(|g| &g.image)),
        }
    }

    pub(crate) fn with_image(point: BlockVector, image: BlockVector) -> Self {
        GraphPoint { point, image }
    }

    pub fn point(&self) -> &BlockVector {
        &self.point
    }

    pub fn image(&self) -> &BlockVector {
        &self.image
    }
}

impl MonotoneOp {
    /// The closure must be pure and return a vector of the same shape as its input.
    pub fn from_resolvent(
        shape: Shape,
        resolvent: impl Fn(f64, &BlockVector) -> BlockVector + Send + Sync + 'static,
    ) -> Self {
        MonotoneOp {
            shape,
            resolvent: Arc::new(resolvent),
        }
    }

    /// The zero operator; its resolvent is the identity.
    pub fn zero(shape: &Shape) -> Self {
        MonotoneOp::from_resolvent(shape.clone(), |_, w| w.clone())
    }

    /// `A = Id`, resolvent `w / (1 + gamma)`.
    pub fn identity(shape: &Shape) -> Self {
        MonotoneOp::from_resolvent(shape.clone(), |g, w| w.scale(1.0 / (1.0 + g)))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn resolvent(&self, gamma: f64, w: &BlockVector) -> Result<BlockVector> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolvent parameter must be positive and finite, got {gamma}"
            )));
        }
        self.shape.ensure_eq(w.shape())?;
        let out = (self.resolvent)(gamma, w);
        self.shape.ensure_eq(out.shape())?;
        Ok(out)
    }

    /// Evaluates `a = J_{gamma A}(w)` and returns the graph point `(a, (w - a) / gamma)`.
    pub fn resolve(&self, gamma: f64, w: &BlockVector) -> Result<GraphPoint> {
        let point = self.resolvent(gamma, w)?;
        let image = w.sub(&point)?.scale(1.0 / gamma);
        Ok(GraphPoint { point, image })
    }

    /// `x -> -z + A x`, with resolvent `w -> J_{gamma A}(w + gamma z)`.
    pub fn shifted(&self, z: &BlockVector) -> Result<MonotoneOp> {
        self.shape.ensure_eq(z.shape())?;
        let inner = self.clone();
        let z = z.clone();
        Ok(MonotoneOp::from_resolvent(self.shape.clone(), move |g, w| {
            let mut arg = w.clone();
            arg.axpy(g, &z).expect("shape checked");
            (inner.resolvent)(g, &arg)
        }))
    }

    /// `y -> B(y - r)`, with resolvent `w -> r + J_{gamma B}(w - r)`.
    pub fn translated(&self, r: &BlockVector) -> Result<MonotoneOp> {
        self.shape.ensure_eq(r.shape())?;
        let inner = self.clone();
        let r = r.clone();
        Ok(MonotoneOp::from_resolvent(self.shape.clone(), move |g, w| {
            let arg = w.sub(&r).expect("shape checked");
            r.add(&(inner.resolvent)(g, &arg)).expect("shape checked")
        }))
    }

    /// Direct product of operators acting blockwise, sharing one resolvent parameter.
    pub fn product(ops: &[MonotoneOp]) -> Result<MonotoneOp> {
        if ops.is_empty() {
            return Err(Error::Construction("product of zero operators".into()));
        }
        let shapes: Vec<Shape> = ops.iter().map(|o| o.shape.clone()).collect();
        let shape = Shape::concat(&shapes);
        let ops: Vec<MonotoneOp> = ops.to_vec();
        Ok(MonotoneOp::from_resolvent(shape, move |g, w| {
            let parts = w.split(&shapes).expect("shape checked by resolvent");
            let outs: Vec<BlockVector> = ops
                .iter()
                .zip(&parts)
                .map(|(op, p)| (op.resolvent)(g, p))
                .collect();
            BlockVector::concat(&outs)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Shape {
        Shape::single(1)
    }

    #[test]
    fn zero_operator_resolve() {
        let w = BlockVector::from_vec(vec![1.0, -3.0]);
        let gp = MonotoneOp::zero(w.shape()).resolve(2.5, &w).unwrap();
        assert_eq!(gp.point(), &w);
        assert_eq!(gp.image().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_resolve_halves() {
        let gp = MonotoneOp::identity(&one()).resolve(1.0, &BlockVector::scalar(1.0)).unwrap();
        assert_eq!(gp.point().as_slice(), &[0.5]);
        assert_eq!(gp.image().as_slice(), &[0.5]);
    }

    #[test]
    fn nonpositive_gamma_rejected() {
        let op = MonotoneOp::identity(&one());
        for g in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                op.resolve(g, &BlockVector::scalar(1.0)),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(op.resolve(1.0, &BlockVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn shift_of_zero_operator_translates() {
        let op = MonotoneOp::zero(&one()).shifted(&BlockVector::scalar(5.0)).unwrap();
        assert_eq!(op.resolvent(2.0, &BlockVector::scalar(1.0)).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn zero_shift_changes_nothing() {
        let base = MonotoneOp::l1(3, 0.7);
        let shifted = base.shifted(&BlockVector::from_vec(vec![0.0; 3])).unwrap();
        let translated = base.translated(&BlockVector::from_vec(vec![0.0; 3])).unwrap();
        let mut rng = crate::rng::SeededRng::new(4);
        for _ in 0..50 {
            let w = rng.vector(base.shape()).scale(4.0);
            let g = rng.range(0.1, 3.0);
            let want = base.resolvent(g, &w).unwrap();
            assert_eq!(shifted.resolvent(g, &w).unwrap(), want);
            assert_eq!(translated.resolvent(g, &w).unwrap(), want);
        }
    }

    #[test]
    fn translated_abs_value() {
        // 1 + softthresh(4 - 1, 1) = 1 + 2
        let op = MonotoneOp::l1(1, 1.0).translated(&BlockVector::scalar(1.0)).unwrap();
        assert_eq!(op.resolvent(1.0, &BlockVector::scalar(4.0)).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn product_acts_blockwise() {
        let single = MonotoneOp::product(&[MonotoneOp::l1(2, 1.0)]).unwrap();
        let w = BlockVector::from_vec(vec![3.0, -0.5]);
        assert_eq!(single.resolvent(1.0, &w).unwrap(), MonotoneOp::l1(2, 1.0).resolvent(1.0, &w).unwrap());

        let zeros = MonotoneOp::product(&[MonotoneOp::zero(&one()), MonotoneOp::zero(&one())]).unwrap();
        let w2 = BlockVector::from_blocks(vec![vec![1.0], vec![2.0]]);
        assert_eq!(zeros.resolvent(0.3, &w2).unwrap(), w2);

        let mixed = MonotoneOp::product(&[MonotoneOp::l1(1, 1.0), MonotoneOp::sq_l2(1)]).unwrap();
        let out = mixed.resolvent(1.0, &BlockVector::from_blocks(vec![vec![3.0], vec![8.0]])).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 4.0]);
        assert!(MonotoneOp::product(&[]).is_err());
    }
}
