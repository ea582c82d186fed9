use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::spec::{ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::fejer::PDPoint;
use crate::linalg::{BlockVector, LinearMap, Shape};
use crate::monotone::{MonotoneOp, ProxFunction};
use crate::rng::SeededRng;
use crate::solver::coupled::{coupled_solve_observed, reduce_to_pd, solve_min_observed, CoupledProblem, MinProblem};
use crate::solver::{solve_observed, solve_sum_observed, IterationEvent, PDProblem, SolveReport, SolverConfig};

/// Oracle points must pass this residual before any solver sees the instance.
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum Instance {
    Pd(PDProblem),
    /// `0 in A x + B x`, solved by the `L = Id` path.
    Sum { a: MonotoneOp, b: MonotoneOp },
    Coupled(CoupledProblem),
    Min(MinProblem),
}

impl Instance {
    /// Equivalent two-operator problem on the product space.
    pub fn as_pd(&self) -> Result<PDProblem> {
        match self {
            Instance::Pd(p) => Ok(p.clone()),
            Instance::Sum { a, b } => PDProblem::new(a.clone(), b.clone(), LinearMap::identity(a.shape())),
            Instance::Coupled(cp) => reduce_to_pd(cp),
            Instance::Min(mp) => reduce_to_pd(mp.as_coupled()),
        }
    }

    pub fn coupled(&self) -> Option<&CoupledProblem> {
        match self {
            Instance::Coupled(cp) => Some(cp),
            Instance::Min(mp) => Some(mp.as_coupled()),
            _ => None,
        }
    }

    pub fn zero_point(&self) -> Result<PDPoint> {
        Ok(match self.coupled() {
            Some(cp) => cp.join(&cp.zero_point()),
            None => self.as_pd()?.zero_point(),
        })
    }

    pub fn kt_residual(&self, p: &PDPoint) -> Result<f64> {
        match self.coupled() {
            Some(cp) => cp.kt_residual(&cp.split(p)?),
            None => self.as_pd()?.kt_residual(p),
        }
    }

    /// Primal objective at a joined point, for minimization instances.
    pub fn objective(&self, p: &PDPoint) -> Option<f64> {
        match self {
            Instance::Min(mp) => {
                let cp = mp.as_coupled();
                mp.objective(&cp.split(p).ok()?.x)
            }
            _ => None,
        }
    }

    /// Runs the solver matching the instance structure. Points are in joined
    /// product-space form.
    pub fn solve_observed(
        &self,
        init: PDPoint,
        cfg: &SolverConfig,
        observer: &mut dyn FnMut(&IterationEvent),
    ) -> Result<SolveReport> {
        match self {
            Instance::Pd(p) => solve_observed(p, init, cfg, observer),
            Instance::Sum { a, b } => solve_sum_observed(a, b, init, cfg, observer),
            Instance::Coupled(cp) => coupled_solve_observed(cp, &cp.split(&init)?, cfg, observer),
            Instance::Min(mp) => solve_min_observed(mp, &mp.as_coupled().split(&init)?, cfg, observer),
        }
    }

    pub fn solve(&self, init: PDPoint, cfg: &SolverConfig) -> Result<SolveReport> {
        self.solve_observed(init, cfg, &mut |_| {})
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub spec: ProblemSpec,
    pub instance: Instance,
    /// A Kuhn-Tucker point, in joined form for block instances.
    pub oracle: Option<PDPoint>,
    /// Reference optimal value, for minimization instances.
    pub oracle_objective: Option<f64>,
}

pub fn generate(spec: &ProblemSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let generated = match spec.kind {
        ProblemKind::AffinePd | ProblemKind::NormfreeStress => affine_pd(spec, &mut rng)?,
        ProblemKind::Lasso => lasso(spec, &mut rng)?,
        ProblemKind::Consensus => consensus(spec, &mut rng)?,
        ProblemKind::SumTwo => sum_two(spec, &mut rng)?,
    };
    if let Some(z) = &generated.oracle {
        let res = generated.instance.kt_residual(z)?;
        if !(res <= ORACLE_TOL) {
            return Err(Error::Construction(format!(
                "oracle self-check failed for {} seed {}: residual {res:e}",
                spec.kind, spec.seed
            )));
        }
    }
    Ok(generated)
}

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.symmetric())
}

/// Monotone `P = S + K` with `S` symmetric positive definite, spectrum of `S`
/// in `[1/condition, 1]`, and a skew part `K` with entries of size `skew`.
fn monotone_matrix(rng: &mut SeededRng, n: usize, condition: f64, skew: f64) -> DMatrix<f64> {
    let sym = spd_matrix(rng, n, condition);
    let h = random_matrix(rng, n, n);
    sym + (&h - h.transpose()) * (0.5 * skew)
}

/// Symmetric with spectrum in `[1/condition, 1]`.
fn spd_matrix(rng: &mut SeededRng, n: usize, condition: f64) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n);
    let s = &g * g.transpose();
    let top = SymmetricEigen::new(s.clone()).eigenvalues.max().max(1e-300);
    let floor = 1.0 / condition;
    s * ((1.0 - floor) / top) + DMatrix::identity(n, n) * floor
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn vec_of(v: &DVector<f64>) -> BlockVector {
    BlockVector::from_vec(v.as_slice().to_vec())
}

/// Solves `K x = rhs` by LU with one step of iterative refinement.
fn refined_solve(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = k.clone().lu();
    let x0 = lu
        .solve(rhs)
        .ok_or_else(|| Error::Construction("singular oracle system".into()))?;
    let r = rhs - k * &x0;
    let dx = lu
        .solve(&r)
        .ok_or_else(|| Error::Construction("singular oracle system".into()))?;
    Ok(x0 + dx)
}

/// Data of an affine coupled system: `A_i x = P_i x + c_i`,
/// `B_k y = Q_k y + d_k`, dense couplings.
struct AffineBlocks {
    p: Vec<DMatrix<f64>>,
    c: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    q: Vec<DMatrix<f64>>,
    d: Vec<DVector<f64>>,
    r: Vec<DVector<f64>>,
    grid: Vec<Vec<Option<DMatrix<f64>>>>,
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), b.shape()).copy_from(b);
        at += b.nrows();
    }
    out
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

impl AffineBlocks {
    fn big_link(&self) -> DMatrix<f64> {
        let rows: Vec<usize> = self.q.iter().map(|q| q.nrows()).collect();
        let cols: Vec<usize> = self.p.iter().map(|p| p.nrows()).collect();
        let mut l = DMatrix::zeros(rows.iter().sum(), cols.iter().sum());
        let mut r0 = 0;
        for (k, row) in self.grid.iter().enumerate() {
            let mut c0 = 0;
            for (i, entry) in row.iter().enumerate() {
                if let Some(m) = entry {
                    l.view_mut((r0, c0), (rows[k], cols[i])).copy_from(m);
                }
                c0 += cols[i];
            }
            r0 += rows[k];
        }
        l
    }

    /// Kuhn-Tucker point from `(P + L^T Q L) x = z - c - L^T (d - Q r)`,
    /// `v = Q (L x - r) + d`.
    fn oracle(&self) -> Result<PDPoint> {
        let p = block_diag(&self.p);
        let q = block_diag(&self.q);
        let l = self.big_link();
        let (c, z, d, r) = (stack(&self.c), stack(&self.z), stack(&self.d), stack(&self.r));
        let k = &p + l.transpose() * &q * &l;
        let rhs = &z - &c - l.transpose() * (&d - &q * &r);
        let x = refined_solve(&k, &rhs)?;
        let v = &q * (&l * &x - &r) + &d;
        let xs = Shape::new(self.p.iter().map(|p| p.nrows()).collect::<Vec<_>>());
        let vs = Shape::new(self.q.iter().map(|q| q.nrows()).collect::<Vec<_>>());
        Ok(PDPoint::new(
            BlockVector::from_flat(&xs, x.as_slice().to_vec())?,
            BlockVector::from_flat(&vs, v.as_slice().to_vec())?,
        ))
    }

    fn coupled(&self) -> Result<CoupledProblem> {
        let a = self
            .p
            .iter()
            .zip(&self.c)
            .map(|(p, c)| MonotoneOp::affine(p.clone(), c.as_slice().to_vec()))
            .collect::<Result<_>>()?;
        let b = self
            .q
            .iter()
            .zip(&self.d)
            .map(|(q, d)| MonotoneOp::affine(q.clone(), d.as_slice().to_vec()))
            .collect::<Result<_>>()?;
        let grid = self
            .grid
            .iter()
            .map(|row| row.iter().map(|e| e.clone().map(LinearMap::dense)).collect())
            .collect();
        CoupledProblem::new(
            a,
            b,
            self.z.iter().map(vec_of).collect(),
            self.r.iter().map(vec_of).collect(),
            grid,
        )
    }
}

fn affine_pd(spec: &ProblemSpec, rng: &mut SeededRng) -> Result<Generated> {
    let n = spec.dims[0];
    let d = *spec.dims.get(1).unwrap_or(&n);
    let skew = match spec.kind {
        ProblemKind::NormfreeStress => 0.0,
        _ => 0.5,
    };
    // P and Q carry norm_scale and 1/norm_scale, so the Kuhn-Tucker operator is
    // norm_scale times one whose conditioning does not depend on norm_scale
    let s = spec.norm_scale;
    let p = monotone_matrix(rng, n, spec.condition, skew) * s;
    let c = DVector::from_vec(rng.values(n));
    let q = spd_matrix(rng, d, spec.condition) / s;
    let dd = DVector::from_vec(rng.values(d));
    let mut l = random_matrix(rng, d, n);
    let norm = spectral_norm(&l);
    if norm == 0.0 {
        return Err(Error::Construction("degenerate coupling matrix".into()));
    }
    l *= s / norm;
    let blocks = AffineBlocks {
        p: vec![p.clone()],
        c: vec![c.clone()],
        z: vec![DVector::zeros(n)],
        q: vec![q.clone()],
        d: vec![dd.clone()],
        r: vec![DVector::zeros(d)],
        grid: vec![vec![Some(l.clone())]],
    };
    let oracle = blocks.oracle()?;
    let problem = PDProblem::new_strict(
        MonotoneOp::affine(p, c.as_slice().to_vec())?,
        MonotoneOp::affine(q, dd.as_slice().to_vec())?,
        LinearMap::dense(l),
    )?;
    Ok(Generated {
        spec: spec.clone(),
        instance: Instance::Pd(problem),
        oracle: Some(oracle),
        oracle_objective: None,
    })
}

fn consensus(spec: &ProblemSpec, rng: &mut SeededRng) -> Result<Generated> {
    let (m, n) = (spec.dims[0], spec.dims[1]);
    let mut blocks = AffineBlocks {
        p: Vec::new(),
        c: Vec::new(),
        z: Vec::new(),
        q: vec![spd_matrix(rng, n, spec.condition)],
        d: vec![DVector::from_vec(rng.values(n))],
        r: vec![DVector::from_vec(rng.values(n))],
        grid: vec![vec![Some(DMatrix::identity(n, n)); m]],
    };
    let draw = |rng: &mut SeededRng| {
        (
            monotone_matrix(rng, n, spec.condition, 0.5),
            DVector::from_vec(rng.values(n)),
            DVector::from_vec(rng.values(n)),
        )
    };
    let shared = draw(rng);
    for i in 0..m {
        let (p, c, z) = if spec.identical_blocks || i == 0 { shared.clone() } else { draw(rng) };
        blocks.p.push(p);
        blocks.c.push(c);
        blocks.z.push(z);
    }
    let oracle = blocks.oracle()?;
    Ok(Generated {
        spec: spec.clone(),
        instance: Instance::Coupled(blocks.coupled()?),
        oracle: Some(oracle),
        oracle_objective: None,
    })
}

fn soft(t: f64, thr: f64) -> f64 {
    t.signum() * (t.abs() - thr).max(0.0)
}

fn sum_two(spec: &ProblemSpec, rng: &mut SeededRng) -> Result<Generated> {
    let n = spec.dims[0];
    let y = rng.values(n);
    let lam = spec.lambda_reg;
    let a = MonotoneOp::l1(n, lam);
    let neg_y: Vec<f64> = y.iter().map(|t| -t).collect();
    let b = MonotoneOp::affine(DMatrix::identity(n, n), neg_y)?;
    let x: Vec<f64> = y.iter().map(|&t| soft(t, lam)).collect();
    let v: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    Ok(Generated {
        spec: spec.clone(),
        instance: Instance::Sum { a, b },
        oracle: Some(PDPoint::new(BlockVector::from_vec(x), BlockVector::from_vec(v))),
        oracle_objective: None,
    })
}

/// `lambda ||x||_1 + 1/2 ||M x - y||^2`
pub fn lasso_objective(m: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> f64 {
    lambda * x.iter().map(|t| t.abs()).sum::<f64>() + 0.5 * (m * x - y).norm_squared()
}

/// Iterative soft-thresholding with step `1 / ||M||^2`, run until successive
/// iterates differ by at most `tol` in every coordinate.
pub fn ista(m: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, tol: f64, max_iters: usize) -> Result<DVector<f64>> {
    let lip = spectral_norm(m).powi(2);
    if lip == 0.0 {
        return Ok(DVector::zeros(m.ncols()));
    }
    let step = 1.0 / lip;
    let mt = m.transpose();
    let mut x = DVector::zeros(m.ncols());
    for _ in 0..max_iters {
        let grad = &mt * (m * &x - y);
        let next = (&x - grad * step).map(|t| soft(t, step * lambda));
        let change = (&next - &x).amax();
        x = next;
        if change <= tol {
            return Ok(x);
        }
    }
    Err(Error::Construction(format!("soft-thresholding did not reach {tol:e} in {max_iters} iterations")))
}

/// Exact minimizer on the support and signs of `approx`, if those pass the
/// optimality conditions.
fn polish_lasso(m: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, approx: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = approx.amax().max(1.0);
    let support: Vec<usize> = (0..approx.len()).filter(|&j| approx[j].abs() > 1e-7 * scale).collect();
    let mut x = DVector::zeros(approx.len());
    if !support.is_empty() {
        let ms = m.select_columns(&support);
        let signs = DVector::from_iterator(support.len(), support.iter().map(|&j| approx[j].signum()));
        let k = ms.transpose() * &ms;
        let rhs = ms.transpose() * y - signs * lambda;
        let xs = refined_solve(&k, &rhs).ok()?;
        for (idx, &j) in support.iter().enumerate() {
            if xs[idx].signum() != approx[j].signum() {
                return None;
            }
            x[j] = xs[idx];
        }
    }
    let corr = m.transpose() * (y - m * &x);
    let ok = (0..x.len()).all(|j| support.contains(&j) || corr[j].abs() <= lambda * (1.0 + 1e-9) + 1e-12);
    ok.then_some(x)
}

fn lasso(spec: &ProblemSpec, rng: &mut SeededRng) -> Result<Generated> {
    let (n, rows) = (spec.dims[0], spec.dims[1]);
    let mut m = random_matrix(rng, rows, n);
    m /= (rows as f64).sqrt();
    let y = DVector::from_vec(rng.values(rows));
    let lam = spec.lambda_reg;

    let (x_ref, x_kt) = if lam == 0.0 {
        let x = refined_solve(&(m.transpose() * &m), &(m.transpose() * &y))?;
        (x.clone(), x)
    } else {
        let approx = ista(&m, &y, lam, 1e-10, 10_000_000)?;
        let exact = polish_lasso(&m, &y, lam, &approx)
            .ok_or_else(|| Error::Construction("could not certify the lasso support".into()))?;
        (approx, exact)
    };
    let v = &m * &x_kt - &y;

    let mp = MinProblem::new(
        vec![ProxFunction::l1(n, lam)],
        vec![ProxFunction::sq_l2(rows)],
        vec![BlockVector::from_vec(vec![0.0; n])],
        vec![vec_of(&y)],
        vec![vec![Some(LinearMap::dense(m.clone()))]],
    )?;
    Ok(Generated {
        spec: spec.clone(),
        instance: Instance::Min(mp),
        oracle: Some(PDPoint::new(vec_of(&x_kt), vec_of(&v))),
        oracle_objective: Some(lasso_objective(&m, &y, lam, &x_ref)),
    })
}

/// Random coupled system with `m, K <= max_blocks` and block sizes
/// `<= max_dim`, mixing l1, quadratic, box and affine operators on a sparse
/// grid. No oracle, and a Kuhn-Tucker point need not exist; used to compare
/// single steps of the blockwise and product-space solvers.
pub fn random_coupled(seed: u64, max_blocks: usize, max_dim: usize) -> Result<CoupledProblem> {
    let mut rng = SeededRng::new(seed);
    let m = rng.int(1, max_blocks);
    let k = rng.int(1, max_blocks);
    let nx: Vec<usize> = (0..m).map(|_| rng.int(1, max_dim)).collect();
    let nv: Vec<usize> = (0..k).map(|_| rng.int(1, max_dim)).collect();
    let op = |rng: &mut SeededRng, dim: usize| -> Result<MonotoneOp> {
        Ok(match rng.int(0, 3) {
            0 => MonotoneOp::l1(dim, rng.range(0.1, 1.0)),
            1 => MonotoneOp::sq_l2(dim),
            2 => {
                let lo: Vec<f64> = (0..dim).map(|_| rng.range(-1.0, 0.0)).collect();
                let hi: Vec<f64> = lo.iter().map(|l| l + rng.range(0.0, 2.0)).collect();
                MonotoneOp::box_indicator(lo, hi)?
            }
            _ => MonotoneOp::affine(monotone_matrix(rng, dim, 10.0, 0.5), rng.values(dim))?,
        })
    };
    let a = nx.iter().map(|&d| op(&mut rng, d)).collect::<Result<Vec<_>>>()?;
    let b = nv.iter().map(|&d| op(&mut rng, d)).collect::<Result<Vec<_>>>()?;
    let z = nx.iter().map(|&d| BlockVector::from_vec(rng.values(d))).collect();
    let r = nv.iter().map(|&d| BlockVector::from_vec(rng.values(d))).collect();
    let grid = nv
        .iter()
        .map(|&rows| {
            nx.iter()
                .map(|&cols| (rng.unit() < 0.7).then(|| LinearMap::dense(random_matrix(&mut rng, rows, cols))))
                .collect()
        })
        .collect();
    CoupledProblem::new(a, b, z, r, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_affine_oracle_by_hand() {
        let g = generate(&ProblemSpec::new(ProblemKind::AffinePd, vec![1], 11)).unwrap();
        let Instance::Pd(prob) = &g.instance else { panic!() };
        let z = g.oracle.unwrap();
        let l = prob.l().apply(&BlockVector::scalar(1.0)).unwrap().as_slice()[0];
        // -L* v in A x and L x in B^-1 v, checked through the resolvents
        let x = z.x.as_slice()[0];
        let v = z.v.as_slice()[0];
        let ax = -l * v;
        // -L* v in A x  <=>  J_A(x + A x) = x
        let back = prob.a().resolvent(1.0, &BlockVector::scalar(x + ax)).unwrap().as_slice()[0];
        assert!((back - x).abs() < 1e-12);
        let bl = prob.b().resolvent(1.0, &BlockVector::scalar(l * x + v)).unwrap().as_slice()[0];
        assert!((bl - l * x).abs() < 1e-12);
    }

    #[test]
    fn unregularized_lasso_is_least_squares() {
        let mut spec = ProblemSpec::new(ProblemKind::Lasso, vec![3, 6], 5);
        spec.lambda_reg = 0.0;
        let g = generate(&spec).unwrap();
        let Instance::Min(mp) = &g.instance else { panic!() };
        let z = g.oracle.unwrap();
        // normal equations: M^T (M x - y) = 0, i.e. L* v = 0
        let cp = mp.as_coupled();
        let lv = cp.coupling(0, 0).unwrap().apply_adjoint(&z.v).unwrap();
        assert!(lv.norm() < 1e-12);
    }

    #[test]
    fn identical_consensus_blocks_agree() {
        let mut spec = ProblemSpec::new(ProblemKind::Consensus, vec![3, 2], 9);
        spec.identical_blocks = true;
        let g = generate(&spec).unwrap();
        let x = g.oracle.unwrap().x;
        let xs: Vec<&[f64]> = x.as_slice().chunks(2).collect();
        for blk in &xs[1..] {
            for (a, b) in blk.iter().zip(xs[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stress_norm_is_prescribed() {
        for scale in [1e-2, 1.0, 50.0] {
            let mut spec = ProblemSpec::new(ProblemKind::NormfreeStress, vec![5, 3], 2);
            spec.norm_scale = scale;
            let g = generate(&spec).unwrap();
            let prob = g.instance.as_pd().unwrap();
            let cols: Vec<f64> = (0..5)
                .flat_map(|j| {
                    let mut e = vec![0.0; 5];
                    e[j] = 1.0;
                    prob.l().apply(&BlockVector::from_vec(e)).unwrap().into_vec()
                })
                .collect();
            let m = DMatrix::from_column_slice(3, 5, &cols);
            assert!((spectral_norm(&m) - scale).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn every_kind_generates_with_certified_oracle() {
        for kind in ProblemKind::ALL {
            let dims = match kind {
                ProblemKind::Lasso => vec![8, 4],
                ProblemKind::Consensus => vec![3, 2],
                _ => vec![4],
            };
            for seed in 0..5 {
                let g = generate(&ProblemSpec::new(kind, dims.clone(), seed)).unwrap();
                let z = g.oracle.as_ref().unwrap();
                assert!(g.instance.kt_residual(z).unwrap() <= ORACLE_TOL);
            }
        }
    }

    #[test]
    fn ista_matches_polished_solution() {
        let g = generate(&ProblemSpec::new(ProblemKind::Lasso, vec![8, 4], 1)).unwrap();
        let z = g.oracle.unwrap();
        let exact = g.instance.objective(&z).unwrap();
        assert!((exact - g.oracle_objective.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn random_coupled_shapes_are_bounded() {
        for seed in 0..30 {
            let cp = random_coupled(seed, 3, 5).unwrap();
            assert!((1..=3).contains(&cp.m()) && (1..=3).contains(&cp.k()));
            assert!(cp.primal_shapes().iter().chain(&cp.dual_shapes()).all(|s| (1..=5).contains(&s.total())));
        }
    }
}
