//! Coupled systems of monotone inclusions.
//!
//! For `i = 1..m` and `k = 1..K`, find `x_i` with
//!
//! ```text
//! z_i in A_i x_i + sum_k L_ki* B_k( sum_j L_kj x_j - r_k )
//! ```
//!
//! together with duals `v_k`. The iteration runs blockwise, touching each
//! `A_i`, `B_k` and coupling entry `L_ki` once per step; it coincides with the
//! two-operator solver applied to the product-space problem from
//! [`reduce_to_pd`].

use std::cell::RefCell;

use super::{no_observer, Driver, IterationEvent, SolveReport, SolverConfig, StepDiag, StepOutput};
use crate::error::{Error, Result};
use crate::fejer::PDPoint;
use crate::linalg::{block_matrix_map, check_adjoint, BlockVector, LinearMap, Shape};
use crate::monotone::{GraphPoint, MonotoneOp, ProxFunction};
use crate::solver::pd::{termination_scale, PDProblem};

#[derive(Clone, Debug)]
pub struct CoupledProblem {
    a_ops: Vec<MonotoneOp>,
    b_ops: Vec<MonotoneOp>,
    z: Vec<BlockVector>,
    r: Vec<BlockVector>,
    /// `grid[k][i]` is `L_ki`; `None` means no coupling.
    grid: Vec<Vec<Option<LinearMap>>>,
}

/// Blockwise primal-dual point `(x_1..x_m, v_1..v_K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPoint {
    pub x: Vec<BlockVector>,
    pub v: Vec<BlockVector>,
}

impl CoupledPoint {
    pub fn norm(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.v)
            .map(BlockVector::norm_sq)
            .sum::<f64>()
            .sqrt()
    }
}

impl CoupledProblem {
    pub fn new(
        a_ops: Vec<MonotoneOp>,
        b_ops: Vec<MonotoneOp>,
        z: Vec<BlockVector>,
        r: Vec<BlockVector>,
        grid: Vec<Vec<Option<LinearMap>>>,
    ) -> Result<Self> {
        let (m, k) = (a_ops.len(), b_ops.len());
        if m == 0 || k == 0 {
            return Err(Error::Construction("need at least one primal and one dual block".into()));
        }
        if z.len() != m || r.len() != k {
            return Err(Error::Construction(format!(
                "{} shifts for {m} primal blocks, {} translations for {k} dual blocks",
                z.len(),
                r.len()
            )));
        }
        for (a, zi) in a_ops.iter().zip(&z) {
            a.shape().ensure_eq(zi.shape())?;
        }
        for (b, rk) in b_ops.iter().zip(&r) {
            b.shape().ensure_eq(rk.shape())?;
        }
        let cols: Vec<Shape> = a_ops.iter().map(|a| a.shape().clone()).collect();
        let rows: Vec<Shape> = b_ops.iter().map(|b| b.shape().clone()).collect();
        // validates grid dimensions and entry shapes
        block_matrix_map(&grid, &cols, &rows)?;
        for (kk, row) in grid.iter().enumerate() {
            for (i, entry) in row.iter().enumerate() {
                if let Some(l) = entry {
                    let defect = check_adjoint(l, 8, (kk * m + i) as u64)?;
                    if defect > 1e-8 {
                        return Err(Error::Construction(format!(
                            "coupling ({kk}, {i}) has adjoint defect {defect:e}"
                        )));
                    }
                }
            }
        }
        Ok(CoupledProblem {
            a_ops,
            b_ops,
            z,
            r,
            grid,
        })
    }

    pub fn m(&self) -> usize {
        self.a_ops.len()
    }

    pub fn k(&self) -> usize {
        self.b_ops.len()
    }

    pub fn primal_shapes(&self) -> Vec<Shape> {
        self.a_ops.iter().map(|a| a.shape().clone()).collect()
    }

    pub fn dual_shapes(&self) -> Vec<Shape> {
        self.b_ops.iter().map(|b| b.shape().clone()).collect()
    }

    pub fn coupling(&self, k: usize, i: usize) -> Option<&LinearMap> {
        self.grid[k][i].as_ref()
    }

    pub fn zero_point(&self) -> CoupledPoint {
        CoupledPoint {
            x: self.a_ops.iter().map(|a| BlockVector::zeros(a.shape())).collect(),
            v: self.b_ops.iter().map(|b| BlockVector::zeros(b.shape())).collect(),
        }
    }

    /// Canonical identification with the product-space point.
    pub fn join(&self, p: &CoupledPoint) -> PDPoint {
        PDPoint::new(BlockVector::concat(&p.x), BlockVector::concat(&p.v))
    }

    pub fn split(&self, p: &PDPoint) -> Result<CoupledPoint> {
        Ok(CoupledPoint {
            x: p.x.split(&self.primal_shapes())?,
            v: p.v.split(&self.dual_shapes())?,
        })
    }

    fn check_point(&self, p: &CoupledPoint) -> Result<()> {
        if p.x.len() != self.m() || p.v.len() != self.k() {
            return Err(Error::Construction(format!(
                "point has {} primal and {} dual blocks, expected {} and {}",
                p.x.len(),
                p.v.len(),
                self.m(),
                self.k()
            )));
        }
        for (a, x) in self.a_ops.iter().zip(&p.x) {
            a.shape().ensure_eq(x.shape())?;
        }
        for (b, v) in self.b_ops.iter().zip(&p.v) {
            b.shape().ensure_eq(v.shape())?;
        }
        Ok(())
    }

    /// `sum_k L_ki* y_k`
    fn adjoint_sum(&self, i: usize, y: &[BlockVector]) -> Result<BlockVector> {
        let mut acc = BlockVector::zeros(self.a_ops[i].shape());
        for (row, yk) in self.grid.iter().zip(y) {
            if let Some(l) = &row[i] {
                acc.axpy(1.0, &l.apply_adjoint(yk)?)?;
            }
        }
        Ok(acc)
    }

    /// `sum_i L_ki x_i`
    fn forward_sum(&self, k: usize, x: &[BlockVector]) -> Result<BlockVector> {
        let mut acc = BlockVector::zeros(self.b_ops[k].shape());
        for (entry, xi) in self.grid[k].iter().zip(x) {
            if let Some(l) = entry {
                acc.axpy(1.0, &l.apply(xi)?)?;
            }
        }
        Ok(acc)
    }

    /// Per-block natural residuals (unit parameters):
    /// `||x_i - J_{A_i}(x_i + z_i - sum_k L_ki* v_k)||` and
    /// `||y_k - J_{B_k}(y_k + v_k)||` with `y_k = sum_i L_ki x_i - r_k`.
    pub fn kt_residuals(&self, p: &CoupledPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(p)?;
        let primal = (0..self.m())
            .map(|i| {
                let mut w = p.x[i].add(&self.z[i])?;
                w.axpy(-1.0, &self.adjoint_sum(i, &p.v)?)?;
                p.x[i].dist(&self.a_ops[i].resolvent(1.0, &w)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let dual = (0..self.k())
            .map(|k| {
                let y = self.forward_sum(k, &p.x)?.sub(&self.r[k])?;
                y.dist(&self.b_ops[k].resolvent(1.0, &y.add(&p.v[k])?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((primal, dual))
    }

    pub fn kt_residual(&self, p: &CoupledPoint) -> Result<f64> {
        let (primal, dual) = self.kt_residuals(p)?;
        Ok(primal.iter().chain(&dual).map(|r| r * r).sum::<f64>().sqrt())
    }

    fn link(&self) -> LinearMap {
        block_matrix_map(&self.grid, &self.primal_shapes(), &self.dual_shapes())
            .expect("grid validated at construction")
    }
}

/// Product-space reformulation: `A = X_i (-z_i + A_i)`, `B = X_k B_k(. - r_k)`,
/// `L = [L_ki]`.
pub fn reduce_to_pd(cp: &CoupledProblem) -> Result<PDProblem> {
    let a_parts = cp
        .a_ops
        .iter()
        .zip(&cp.z)
        .map(|(a, z)| a.shifted(z))
        .collect::<Result<Vec<_>>>()?;
    let b_parts = cp
        .b_ops
        .iter()
        .zip(&cp.r)
        .map(|(b, r)| b.translated(r))
        .collect::<Result<Vec<_>>>()?;
    PDProblem::new(
        MonotoneOp::product(&a_parts)?,
        MonotoneOp::product(&b_parts)?,
        cp.link(),
    )
}

/// One blockwise iteration.
#[derive(Clone, Debug)]
pub struct CoupledStep {
    pub next: CoupledPoint,
    pub diag: StepDiag,
    /// Witnesses in the graphs of `-z_i + A_i`.
    pub a: Vec<GraphPoint>,
    /// Witnesses in the graphs of `B_k(. - r_k)`.
    pub b: Vec<GraphPoint>,
    /// `||s*_i||^2` per primal block.
    pub s_blocks: Vec<f64>,
    /// `||t_k||^2` per dual block.
    pub t_blocks: Vec<f64>,
    pub solution: Option<CoupledPoint>,
}

pub fn coupled_step(
    cp: &CoupledProblem,
    p: &CoupledPoint,
    gamma: f64,
    mu: f64,
    lambda: f64,
    sigma_tol: f64,
) -> Result<CoupledStep> {
    cp.check_point(p)?;
    if !(gamma > 0.0 && mu > 0.0 && lambda > 0.0 && lambda < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "need gamma, mu > 0 and lambda in ]0, 2[, got {gamma}, {mu}, {lambda}"
        )));
    }
    let (m, kk) = (cp.m(), cp.k());

    // a_i = J_{gamma A_i}(x_i + gamma (z_i - sum_k L_ki* v_k))
    let mut a = Vec::with_capacity(m);
    let mut lv_sq = 0.0;
    for i in 0..m {
        let lv = cp.adjoint_sum(i, &p.v)?;
        lv_sq += lv.norm_sq();
        let w = cp.z[i].sub(&lv)?;
        let mut arg = p.x[i].clone();
        arg.axpy(gamma, &w)?;
        let point = cp.a_ops[i].resolvent(gamma, &arg)?;
        let mut image = arg.sub(&point)?.scale(1.0 / gamma);
        image.axpy(-1.0, &cp.z[i])?;
        a.push(GraphPoint::with_image(point, image));
    }

    // l_k = sum_i L_ki x_i,  b_k = r_k + J_{mu B_k}(l_k + mu v_k - r_k),  t_k = b_k - sum_i L_ki a_i
    let a_points: Vec<BlockVector> = a.iter().map(|g| g.point().clone()).collect();
    let mut l = Vec::with_capacity(kk);
    let mut b = Vec::with_capacity(kk);
    let mut t = Vec::with_capacity(kk);
    for k in 0..kk {
        let lk = cp.forward_sum(k, &p.x)?;
        let mut arg = lk.clone();
        arg.axpy(mu, &p.v[k])?;
        let point = cp.r[k].add(&cp.b_ops[k].resolvent(mu, &arg.sub(&cp.r[k])?)?)?;
        let image = arg.sub(&point)?.scale(1.0 / mu);
        t.push(point.sub(&cp.forward_sum(k, &a_points)?)?);
        b.push(GraphPoint::with_image(point, image));
        l.push(lk);
    }
    let lb: Vec<BlockVector> = l
        .iter()
        .zip(&b)
        .map(|(lk, bk)| lk.sub(bk.point()))
        .collect::<Result<_>>()?;

    // s_i = (x_i - a_i)/gamma + sum_k L_ki* (l_k - b_k) / mu
    let mut s = Vec::with_capacity(m);
    let mut xa_sq = 0.0;
    for (i, ai) in a_points.iter().enumerate() {
        let xa = p.x[i].sub(ai)?;
        xa_sq += xa.norm_sq();
        let mut si = xa.scale(1.0 / gamma);
        si.axpy(1.0 / mu, &cp.adjoint_sum(i, &lb)?)?;
        s.push(si);
    }
    let lb_sq: f64 = lb.iter().map(BlockVector::norm_sq).sum();
    let s_blocks: Vec<f64> = s.iter().map(BlockVector::norm_sq).collect();
    let t_blocks: Vec<f64> = t.iter().map(BlockVector::norm_sq).collect();
    let s_norm2: f64 = s_blocks.iter().sum();
    let t_norm2: f64 = t_blocks.iter().sum();
    let tau = s_norm2 + t_norm2;
    let numerator = xa_sq / gamma + lb_sq / mu;
    let mut diag = StepDiag {
        s_norm2,
        t_norm2,
        tau,
        theta: 0.0,
        delta: 0.0,
        numerator,
        primal_gap: xa_sq.sqrt(),
        dual_gap: lb_sq.sqrt(),
    };

    let joined = cp.join(p);
    let lx_norm = l.iter().map(BlockVector::norm_sq).sum::<f64>().sqrt();
    let threshold = sigma_tol * termination_scale(&joined, lv_sq.sqrt(), lx_norm, gamma, mu);
    if tau <= threshold * threshold {
        let v_bar = p
            .v
            .iter()
            .zip(&lb)
            .map(|(vk, lbk)| {
                let mut out = vk.clone();
                out.axpy(1.0 / mu, lbk)?;
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(CoupledStep {
            next: p.clone(),
            diag,
            a,
            b,
            s_blocks,
            t_blocks,
            solution: Some(CoupledPoint { x: a_points, v: v_bar }),
        });
    }

    let theta = lambda * numerator / tau;
    diag.theta = theta;
    diag.delta = numerator / tau.sqrt();
    let mut next = p.clone();
    for (xi, si) in next.x.iter_mut().zip(&s) {
        xi.axpy(-theta, si)?;
    }
    for (vk, tk) in next.v.iter_mut().zip(&t) {
        vk.axpy(-theta, tk)?;
    }
    Ok(CoupledStep {
        next,
        diag,
        a,
        b,
        s_blocks,
        t_blocks,
        solution: None,
    })
}

pub fn coupled_solve(cp: &CoupledProblem, init: &CoupledPoint, cfg: &SolverConfig) -> Result<SolveReport> {
    coupled_solve_observed(cp, init, cfg, &mut no_observer)
}

/// Runs the blockwise iteration. Points in the report and in observer
/// events use the joined product-space form; [`CoupledProblem::split`]
/// recovers the blocks.
pub fn coupled_solve_observed(
    cp: &CoupledProblem,
    init: &CoupledPoint,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    cp.check_point(init)?;
    let link = cp.link();
    // the driver works on joined points; keep the blockwise iterate alongside
    let current = RefCell::new(init.clone());
    Driver { cfg, link: &link }.run(
        cp.join(init),
        |n| cfg.params(n),
        |_, g, m, lam| {
            let p = current.borrow().clone();
            let step = coupled_step(cp, &p, g, m, lam, cfg.sigma_tol)?;
            let out = StepOutput {
                next: cp.join(&step.next),
                diag: step.diag,
                a: GraphPoint::concat(&step.a),
                b: GraphPoint::concat(&step.b),
                solution: step.solution.as_ref().map(|s| cp.join(s)),
            };
            *current.borrow_mut() = step.next;
            Ok(out)
        },
        |p| cp.kt_residual(&cp.split(p)?),
        observer,
    )
}

/// Multivariate convex minimization
///
/// ```text
/// minimize  sum_i (f_i(x_i) - <x_i, z_i>) + sum_k g_k( sum_i L_ki x_i - r_k )
/// ```
///
/// solved through the coupled iteration with `A_i = df_i`, `B_k = dg_k`.
/// The usual range/relative-interior qualification condition is the caller's
/// responsibility; it is not checked.
#[derive(Clone, Debug)]
pub struct MinProblem {
    f: Vec<ProxFunction>,
    g: Vec<ProxFunction>,
    inner: CoupledProblem,
}

impl MinProblem {
    pub fn new(
        f: Vec<ProxFunction>,
        g: Vec<ProxFunction>,
        z: Vec<BlockVector>,
        r: Vec<BlockVector>,
        grid: Vec<Vec<Option<LinearMap>>>,
    ) -> Result<Self> {
        let inner = CoupledProblem::new(
            f.iter().map(|fi| fi.subdifferential().clone()).collect(),
            g.iter().map(|gk| gk.subdifferential().clone()).collect(),
            z,
            r,
            grid,
        )?;
        Ok(MinProblem { f, g, inner })
    }

    pub fn as_coupled(&self) -> &CoupledProblem {
        &self.inner
    }

    /// Primal objective, or `None` when some function has no evaluator.
    pub fn objective(&self, x: &[BlockVector]) -> Option<f64> {
        let cp = &self.inner;
        let mut total = 0.0;
        for (i, fi) in self.f.iter().enumerate() {
            total += fi.value(&x[i])? - x[i].inner(&cp.z[i]).ok()?;
        }
        for (k, gk) in self.g.iter().enumerate() {
            let y = cp.forward_sum(k, x).ok()?.sub(&cp.r[k]).ok()?;
            total += gk.value(&y)?;
        }
        Some(total)
    }
}

pub fn solve_min(mp: &MinProblem, init: &CoupledPoint, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_min_observed(mp, init, cfg, &mut no_observer)
}

pub fn solve_min_observed(
    mp: &MinProblem,
    init: &CoupledPoint,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    let track = mp.f.iter().chain(&mp.g).all(ProxFunction::has_value);
    let mut objective = Vec::new();
    let mut report = coupled_solve_observed(&mp.inner, init, cfg, &mut |e| {
        if track {
            let at = e.step.solution.as_ref().unwrap_or(&e.step.next);
            if let Ok(p) = mp.inner.split(at) {
                objective.extend(mp.objective(&p.x));
            }
        }
        observer(e);
    })?;
    report.objective = objective;
    Ok(report)
}
