use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Block structure of a direct sum of coordinate spaces: one dimension per block.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Arc<[usize]>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into().into())
    }

    /// A single block of dimension `dim`.
    pub fn single(dim: usize) -> Self {
        Shape::new(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    /// Total number of scalar coordinates.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Shape of the direct sum of `parts`, blocks kept in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Shape>) -> Shape {
        let dims: Vec<usize> = parts
            .into_iter()
            .flat_map(|s| s.dims().iter().copied())
            .collect();
        Shape::new(dims)
    }

    pub(crate) fn ensure_eq(&self, other: &Shape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::shape(self, other))
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &self.0[..])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &self.0[..])
    }
}

/// Element of a finite direct sum of real coordinate spaces.
///
/// Coordinates are stored contiguously; the block structure is fixed at
/// construction and every binary operation requires identical structure.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    shape: Shape,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(shape: &Shape) -> Self {
        BlockVector {
            shape: shape.clone(),
            data: vec![0.0; shape.total()],
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        let shape = Shape::new(blocks.iter().map(Vec::len).collect::<Vec<_>>());
        let data = blocks.into_iter().flatten().collect();
        BlockVector { shape, data }
    }

    /// Single-block vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        BlockVector {
            shape: Shape::single(data.len()),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        BlockVector::from_vec(vec![value])
    }

    pub fn from_flat(shape: &Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.total() {
            return Err(Error::shape(shape, &Shape::single(data.len())));
        }
        Ok(BlockVector {
            shape: shape.clone(),
            data,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let dims = self.shape.dims();
        let start: usize = dims[..i].iter().sum();
        start..start + dims[i]
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.block_range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.block_range(i);
        &mut self.data[r]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let mut offset = 0;
        self.shape.dims().iter().map(move |&d| {
            let b = &self.data[offset..offset + d];
            offset += d;
            b
        })
    }

    pub fn inner(&self, other: &BlockVector) -> Result<f64> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, other: &BlockVector) -> Result<BlockVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &BlockVector) -> Result<BlockVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> BlockVector {
        self.map(|a| alpha * a)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BlockVector {
        BlockVector {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn zip_with(&self, other: &BlockVector, f: impl Fn(f64, f64) -> f64) -> Result<BlockVector> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(BlockVector {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &BlockVector) -> Result<()> {
        self.shape.ensure_eq(&x.shape)?;
        for (s, &xi) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * xi;
        }
        Ok(())
    }

    pub fn dist(&self, other: &BlockVector) -> Result<f64> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn max_abs_diff(&self, other: &BlockVector) -> Result<f64> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Direct-sum concatenation; the result carries all blocks of all parts in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a BlockVector>) -> BlockVector {
        let parts: Vec<&BlockVector> = parts.into_iter().collect();
        let shape = Shape::concat(parts.iter().map(|p| &p.shape));
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        BlockVector { shape, data }
    }

    /// Inverse of [`BlockVector::concat`]: cuts `self` into pieces with the given shapes.
    pub fn split(&self, shapes: &[Shape]) -> Result<Vec<BlockVector>> {
        let joined = Shape::concat(shapes);
        self.shape.ensure_eq(&joined)?;
        let mut offset = 0;
        Ok(shapes
            .iter()
            .map(|s| {
                let n = s.total();
                let piece = BlockVector {
                    shape: s.clone(),
                    data: self.data[offset..offset + n].to_vec(),
                };
                offset += n;
                piece
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inner_of_two_block_vectors() {
        let a = BlockVector::from_blocks(vec![vec![1.0, 2.0], vec![3.0]]);
        let b = BlockVector::from_blocks(vec![vec![0.0, 1.0], vec![2.0]]);
        assert_eq!(a.inner(&b).unwrap(), 8.0);
        let c = BlockVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(c.inner(&c).unwrap(), 25.0);
    }

    #[test]
    fn mismatched_structure_is_rejected() {
        let a = BlockVector::from_blocks(vec![vec![1.0, 2.0], vec![3.0]]);
        let b = BlockVector::from_blocks(vec![vec![1.0], vec![2.0, 3.0]]);
        assert!(matches!(a.inner(&b), Err(Error::ShapeMismatch { .. })));
        assert!(a.add(&b).is_err());
        assert!(BlockVector::from_flat(&Shape::new(vec![2, 2]), vec![1.0; 3]).is_err());
    }

    #[test]
    fn split_undoes_concat() {
        let a = BlockVector::from_blocks(vec![vec![1.0, 2.0], vec![3.0]]);
        let b = BlockVector::from_vec(vec![4.0, 5.0, 6.0]);
        let c = BlockVector::concat([&a, &b]);
        assert_eq!(c.shape().dims(), &[2, 1, 3]);
        let parts = c.split(&[a.shape().clone(), b.shape().clone()]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-1e3..1e3f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn inner_is_symmetric((x, y) in pair()) {
            let a = BlockVector::from_vec(x.clone());
            let b = BlockVector::from_vec(y.clone());
            // reversed accumulation order as an independent route
            let rev: f64 = x.iter().zip(&y).rev().map(|(p, q)| p * q).sum();
            let ab = a.inner(&b).unwrap();
            prop_assert_eq!(ab, b.inner(&a).unwrap());
            prop_assert!((ab - rev).abs() <= 1e-10 * (1.0 + rev.abs()));
        }

        #[test]
        fn cauchy_schwarz((x, y) in pair()) {
            let a = BlockVector::from_vec(x);
            let b = BlockVector::from_vec(y);
            prop_assert!(a.inner(&b).unwrap().abs() <= a.norm() * b.norm() * (1.0 + 1e-12) + 1e-12);
        }
    }
}
