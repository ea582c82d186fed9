use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BlockVector, Shape};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

type ApplyFn = dyn Fn(&BlockVector) -> BlockVector + Send + Sync;

/// Bounded linear operator known only through forward and adjoint application.
///
/// There is deliberately no norm accessor and no inverse: solvers built on
/// this type cannot depend on either.
#[derive(Clone)]
pub struct LinearMap {
    in_shape: Shape,
    out_shape: Shape,
    forward: Arc<ApplyFn>,
    adjoint: Arc<ApplyFn>,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMap")
            .field("in_shape", &self.in_shape)
            .field("out_shape", &self.out_shape)
            .finish_non_exhaustive()
    }
}

impl LinearMap {
    /// Closures must be pure and map `in_shape -> out_shape` (forward) and
    /// `out_shape -> in_shape` (adjoint).
    pub fn new(
        in_shape: Shape,
        out_shape: Shape,
        forward: impl Fn(&BlockVector) -> BlockVector + Send + Sync + 'static,
        adjoint: impl Fn(&BlockVector) -> BlockVector + Send + Sync + 'static,
    ) -> Self {
        LinearMap {
            in_shape,
            out_shape,
            forward: Arc::new(forward),
            adjoint: Arc::new(adjoint),
        }
    }

    pub fn identity(shape: &Shape) -> Self {
        LinearMap::new(shape.clone(), shape.clone(), BlockVector::clone, BlockVector::clone)
    }

    pub fn zero(in_shape: &Shape, out_shape: &Shape) -> Self {
        let (i, o) = (in_shape.clone(), out_shape.clone());
        LinearMap::new(
            in_shape.clone(),
            out_shape.clone(),
            move |_| BlockVector::zeros(&o),
            move |_| BlockVector::zeros(&i),
        )
    }

    /// `x -> c x` on a space of the given shape.
    pub fn scalar(c: f64, shape: &Shape) -> Self {
        LinearMap::new(
            shape.clone(),
            shape.clone(),
            move |x| x.scale(c),
            move |y| y.scale(c),
        )
    }

    /// Single-block map given by a dense matrix; the adjoint is its transpose.
    pub fn dense(matrix: DMatrix<f64>) -> Self {
        let in_shape = Shape::single(matrix.ncols());
        let out_shape = Shape::single(matrix.nrows());
        let m = Arc::new(matrix);
        let mt = Arc::clone(&m);
        LinearMap::new(
            in_shape,
            out_shape,
            move |x| {
                let y = m.as_ref() * DVector::from_column_slice(x.as_slice());
                BlockVector::from_vec(y.as_slice().to_vec())
            },
            move |y| {
                let x = mt.tr_mul(&DVector::from_column_slice(y.as_slice()));
                BlockVector::from_vec(x.as_slice().to_vec())
            },
        )
    }

    /// Dense map with a caller-supplied adjoint matrix (need not be the transpose;
    /// used to exercise the adjoint check).
    pub fn dense_with_adjoint(matrix: DMatrix<f64>, adjoint: DMatrix<f64>) -> Result<Self> {
        if adjoint.nrows() != matrix.ncols() || adjoint.ncols() != matrix.nrows() {
            return Err(Error::Construction(format!(
                "adjoint is {}x{}, expected {}x{}",
                adjoint.nrows(),
                adjoint.ncols(),
                matrix.ncols(),
                matrix.nrows()
            )));
        }
        let in_shape = Shape::single(matrix.ncols());
        let out_shape = Shape::single(matrix.nrows());
        let (m, a) = (Arc::new(matrix), Arc::new(adjoint));
        Ok(LinearMap::new(
            in_shape,
            out_shape,
            move |x| {
                let y = m.as_ref() * DVector::from_column_slice(x.as_slice());
                BlockVector::from_vec(y.as_slice().to_vec())
            },
            move |y| {
                let x = a.as_ref() * DVector::from_column_slice(y.as_slice());
                BlockVector::from_vec(x.as_slice().to_vec())
            },
        ))
    }

    pub fn in_shape(&self) -> &Shape {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &Shape {
        &self.out_shape
    }

    pub fn apply(&self, x: &BlockVector) -> Result<BlockVector> {
        self.in_shape.ensure_eq(x.shape())?;
        let y = (self.forward)(x);
        self.out_shape.ensure_eq(y.shape())?;
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &BlockVector) -> Result<BlockVector> {
        self.out_shape.ensure_eq(y.shape())?;
        let x = (self.adjoint)(y);
        self.in_shape.ensure_eq(x.shape())?;
        Ok(x)
    }

    /// The adjoint as a map in its own right.
    pub fn adjoint_map(&self) -> LinearMap {
        LinearMap {
            in_shape: self.out_shape.clone(),
            out_shape: self.in_shape.clone(),
            forward: Arc::clone(&self.adjoint),
            adjoint: Arc::clone(&self.forward),
        }
    }
}

/// Largest sampled value of `|<Lx, y> - <x, L*y>| / (1 + |<Lx, y>|)` over
/// `trials` random pairs drawn from the seeded stream.
pub fn check_adjoint(map: &LinearMap, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = rng.vector(map.in_shape());
        let y = rng.vector(map.out_shape());
        let lhs = map.apply(&x)?.inner(&y)?;
        let rhs = x.inner(&map.apply_adjoint(&y)?)?;
        worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    Ok(worst)
}

/// Assembles `(x_i) -> (sum_i L_ki x_i)_k` from a `K x m` grid of optional
/// entries. Absent entries are zero maps and are skipped in both sums.
///
/// `col_shapes[i]` is the shape of the i-th input piece and `row_shapes[k]`
/// that of the k-th output piece; the combined shapes are their direct sums.
pub fn block_matrix_map(
    grid: &[Vec<Option<LinearMap>>],
    col_shapes: &[Shape],
    row_shapes: &[Shape],
) -> Result<LinearMap> {
    if grid.len() != row_shapes.len() {
        return Err(Error::Construction(format!(
            "grid has {} rows for {} output blocks",
            grid.len(),
            row_shapes.len()
        )));
    }
    for (k, row) in grid.iter().enumerate() {
        if row.len() != col_shapes.len() {
            return Err(Error::Construction(format!(
                "grid row {k} has {} entries for {} input blocks",
                row.len(),
                col_shapes.len()
            )));
        }
        for (i, entry) in row.iter().enumerate() {
            if let Some(l) = entry {
                col_shapes[i].ensure_eq(l.in_shape())?;
                row_shapes[k].ensure_eq(l.out_shape())?;
            }
        }
    }

    let grid: Arc<Vec<Vec<Option<LinearMap>>>> = Arc::new(grid.to_vec());
    let cols: Arc<[Shape]> = col_shapes.into();
    let rows: Arc<[Shape]> = row_shapes.into();
    let in_shape = Shape::concat(col_shapes);
    let out_shape = Shape::concat(row_shapes);

    let (g_fwd, c_fwd, r_fwd) = (Arc::clone(&grid), Arc::clone(&cols), Arc::clone(&rows));
    let forward = move |x: &BlockVector| {
        let parts = x.split(&c_fwd).expect("input shape checked by apply");
        let out: Vec<BlockVector> = g_fwd
            .iter()
            .zip(r_fwd.iter())
            .map(|(row, shape)| {
                let mut acc = BlockVector::zeros(shape);
                for (entry, xi) in row.iter().zip(&parts) {
                    if let Some(l) = entry {
                        let y = l.apply(xi).expect("entry shapes checked at construction");
                        acc.axpy(1.0, &y).expect("entry shapes checked at construction");
                    }
                }
                acc
            })
            .collect();
        BlockVector::concat(&out)
    };

    let (g_adj, c_adj, r_adj) = (grid, cols, rows);
    let adjoint = move |y: &BlockVector| {
        let parts = y.split(&r_adj).expect("input shape checked by apply_adjoint");
        let out: Vec<BlockVector> = c_adj
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let mut acc = BlockVector::zeros(shape);
                for (row, yk) in g_adj.iter().zip(&parts) {
                    if let Some(l) = &row[i] {
                        let x = l.apply_adjoint(yk).expect("entry shapes checked at construction");
                        acc.axpy(1.0, &x).expect("entry shapes checked at construction");
                    }
                }
                acc
            })
            .collect();
        BlockVector::concat(&out)
    };

    Ok(LinearMap::new(in_shape, out_shape, forward, adjoint))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(d: usize) -> Shape {
        Shape::single(d)
    }

    #[test]
    fn identity_has_zero_defect() {
        let l = LinearMap::identity(&s(3));
        assert_eq!(check_adjoint(&l, 20, 1).unwrap(), 0.0);
    }

    #[test]
    fn dense_transpose_passes_check() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let l = LinearMap::dense_with_adjoint(m.clone(), m.transpose()).unwrap();
        assert!(check_adjoint(&l, 50, 3).unwrap() <= 1e-12);
        assert!(check_adjoint(&LinearMap::dense(m), 50, 3).unwrap() <= 1e-12);
    }

    #[test]
    fn doubled_adjoint_is_flagged() {
        // on x = y = e1 with L = I: <Lx,y> = 1, <x, 2L*y> = 2, defect 1/(1+1)
        let m = DMatrix::<f64>::identity(2, 2);
        let l = LinearMap::dense_with_adjoint(m.clone(), m * 2.0).unwrap();
        let x = BlockVector::from_vec(vec![1.0, 0.0]);
        let lhs = l.apply(&x).unwrap().inner(&x).unwrap();
        let rhs = x.inner(&l.apply_adjoint(&x).unwrap()).unwrap();
        assert_eq!((lhs - rhs).abs() / (1.0 + lhs.abs()), 0.5);
        // the sampled defect lands well above any reasonable guard
        assert!(check_adjoint(&l, 20, 9).unwrap() > 1e-2);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(check_adjoint(&LinearMap::identity(&s(1)), 0, 0).is_err());
    }

    #[test]
    fn single_entry_grid_is_identity() {
        let l = block_matrix_map(&[vec![Some(LinearMap::identity(&s(2)))]], &[s(2)], &[s(2)]).unwrap();
        let x = BlockVector::from_vec(vec![1.5, -2.0]);
        assert_eq!(l.apply(&x).unwrap(), x);
        assert_eq!(l.apply_adjoint(&x).unwrap(), x);
    }

    #[test]
    fn consensus_grid_sums_and_duplicates() {
        let id = LinearMap::identity(&s(1));
        let l = block_matrix_map(&[vec![Some(id.clone()), Some(id)]], &[s(1), s(1)], &[s(1)]).unwrap();
        let x = BlockVector::concat([&BlockVector::scalar(2.0), &BlockVector::scalar(5.0)]);
        assert_eq!(l.apply(&x).unwrap().as_slice(), &[7.0]);
        assert_eq!(l.apply_adjoint(&BlockVector::scalar(3.0)).unwrap().as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn scalar_grid_matches_dense_matrix() {
        let entries = [[2.0, 0.0], [1.0, 3.0]];
        let grid: Vec<Vec<Option<LinearMap>>> = entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| (c != 0.0).then(|| LinearMap::scalar(c, &s(1))))
                    .collect()
            })
            .collect();
        let l = block_matrix_map(&grid, &[s(1), s(1)], &[s(1), s(1)]).unwrap();
        let dense = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0]);
        let mut rng = SeededRng::new(5);
        for _ in 0..20 {
            let x = rng.values(2);
            let want = &dense * DVector::from_column_slice(&x);
            let want_t = dense.tr_mul(&DVector::from_column_slice(&x));
            let xb = BlockVector::concat([&BlockVector::scalar(x[0]), &BlockVector::scalar(x[1])]);
            assert_eq!(l.apply(&xb).unwrap().as_slice(), want.as_slice());
            assert_eq!(l.apply_adjoint(&xb).unwrap().as_slice(), want_t.as_slice());
        }
        assert!(check_adjoint(&l, 50, 2).unwrap() <= 1e-12);
    }

    #[test]
    fn grid_is_linear() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let grid = vec![
            vec![Some(LinearMap::dense(m)), None],
            vec![None, Some(LinearMap::scalar(-2.0, &s(2)))],
        ];
        let l = block_matrix_map(&grid, &[s(3), s(2)], &[s(2), s(2)]).unwrap();
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let (x, y) = (rng.vector(l.in_shape()), rng.vector(l.in_shape()));
            let (a, b) = (rng.symmetric() * 3.0, rng.symmetric() * 3.0);
            let mut comb = x.scale(a);
            comb.axpy(b, &y).unwrap();
            let lhs = l.apply(&comb).unwrap();
            let mut rhs = l.apply(&x).unwrap().scale(a);
            rhs.axpy(b, &l.apply(&y).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn inconsistent_grid_shapes_rejected() {
        let grid = vec![vec![Some(LinearMap::identity(&s(2))), Some(LinearMap::identity(&s(3)))]];
        assert!(block_matrix_map(&grid, &[s(2), s(2)], &[s(2)]).is_err());
        assert!(block_matrix_map(&[vec![None]], &[s(1)], &[s(1), s(1)]).is_err());
    }

    #[test]
    fn misbehaving_closure_is_caught() {
        let l = LinearMap::new(s(2), s(2), |_| BlockVector::scalar(0.0), BlockVector::clone);
        assert!(l.apply(&BlockVector::from_vec(vec![1.0, 1.0])).is_err());
    }
}
