use super::{no_observer, Driver, IterationEvent, SolveReport, SolverConfig, StepDiag, StepOutput};
use crate::error::{Error, Result};
use crate::fejer::{build_halfspace, kt_residual, PDPoint};
use crate::linalg::{check_adjoint, BlockVector, LinearMap};
use crate::monotone::{GraphPoint, MonotoneOp};

/// Find `x` with `0 in A x + L* B L x`, together with a dual `v` such that
/// `-L* v in A x` and `L x in B^-1 v`.
#[derive(Clone, Debug)]
pub struct PDProblem {
    a: MonotoneOp,
    b: MonotoneOp,
    l: LinearMap,
}

impl PDProblem {
    pub fn new(a: MonotoneOp, b: MonotoneOp, l: LinearMap) -> Result<Self> {
        a.shape().ensure_eq(l.in_shape())?;
        b.shape().ensure_eq(l.out_shape())?;
        Ok(PDProblem { a, b, l })
    }

    /// Like [`PDProblem::new`], and also rejects `L` whose sampled adjoint
    /// defect exceeds `1e-8`.
    pub fn new_strict(a: MonotoneOp, b: MonotoneOp, l: LinearMap) -> Result<Self> {
        let defect = check_adjoint(&l, 16, 0x5eed)?;
        if defect > 1e-8 {
            return Err(Error::Construction(format!("adjoint defect {defect:e} exceeds 1e-8")));
        }
        PDProblem::new(a, b, l)
    }

    pub fn a(&self) -> &MonotoneOp {
        &self.a
    }

    pub fn b(&self) -> &MonotoneOp {
        &self.b
    }

    pub fn l(&self) -> &LinearMap {
        &self.l
    }

    pub fn zero_point(&self) -> PDPoint {
        PDPoint::new(
            BlockVector::zeros(self.l.in_shape()),
            BlockVector::zeros(self.l.out_shape()),
        )
    }

    pub fn kt_residual(&self, p: &PDPoint) -> Result<f64> {
        kt_residual(p, &self.a, &self.b, &self.l)
    }
}

fn check_step_params(gamma: f64, mu: f64, lambda: f64) -> Result<()> {
    if !(gamma > 0.0 && mu > 0.0 && gamma.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "resolvent scalings must be positive, got gamma={gamma}, mu={mu}"
        )));
    }
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation must lie in ]0, 2[, got {lambda}"
        )));
    }
    Ok(())
}

/// Shared tail of the resolvent-based step once both graph points and `l = L x`
/// are known. `forward` and `adjoint` apply `L` and `L*`; `lv_norm` is `||L* v||`.
#[allow(clippy::too_many_arguments)]
fn finish_step(
    p: &PDPoint,
    a: GraphPoint,
    b: GraphPoint,
    l: &BlockVector,
    gamma: f64,
    mu: f64,
    lambda: f64,
    sigma_tol: f64,
    lv_norm: f64,
    forward: impl Fn(&BlockVector) -> Result<BlockVector>,
    adjoint: impl Fn(&BlockVector) -> Result<BlockVector>,
) -> Result<StepOutput> {
    let xa = p.x.sub(a.point())?;
    let lb = l.sub(b.point())?;
    let mut s = xa.scale(1.0 / gamma);
    s.axpy(1.0 / mu, &adjoint(&lb)?)?;
    let t = b.point().sub(&forward(a.point())?)?;

    let s_norm2 = s.norm_sq();
    let t_norm2 = t.norm_sq();
    let tau = s_norm2 + t_norm2;
    let (xa2, lb2) = (xa.norm_sq(), lb.norm_sq());
    let numerator = xa2 / gamma + lb2 / mu;
    let mut diag = StepDiag {
        s_norm2,
        t_norm2,
        tau,
        theta: 0.0,
        delta: 0.0,
        numerator,
        primal_gap: xa2.sqrt(),
        dual_gap: lb2.sqrt(),
    };

    let threshold = sigma_tol * termination_scale(p, lv_norm, l.norm(), gamma, mu);
    if tau <= threshold * threshold {
        let mut v_bar = p.v.clone();
        v_bar.axpy(1.0 / mu, &lb)?;
        let solution = PDPoint::new(a.point().clone(), v_bar);
        return Ok(StepOutput {
            next: p.clone(),
            diag,
            a,
            b,
            solution: Some(solution),
        });
    }

    let theta = lambda * numerator / tau;
    diag.theta = theta;
    diag.delta = numerator / tau.sqrt();
    let next = p.moved(theta, &s, &t)?;
    Ok(StepOutput {
        next,
        diag,
        a,
        b,
        solution: None,
    })
}

/// Magnitude of the quantities that `s` and `t` are computed from, so that
/// the termination test sits at the rounding floor of the step:
/// `1 + ||p|| + ||x||/gamma + ||L* v|| + ||L x||/mu + ||v||`.
pub(crate) fn termination_scale(p: &PDPoint, lv_norm: f64, lx_norm: f64, gamma: f64, mu: f64) -> f64 {
    let (xn, vn) = (p.x.norm(), p.v.norm());
    1.0 + p.norm() + xn / gamma + lv_norm + lx_norm / mu + vn
}

/// One iteration of the resolvent selection rule:
///
/// ```text
/// a = J_{gamma A}(x - gamma L* v)     l = L x     b = J_{mu B}(l + mu v)
/// s = (x - a)/gamma + L*(l - b)/mu    t = b - L a
/// tau = ||s||^2 + ||t||^2
/// theta = lambda (||x - a||^2/gamma + ||l - b||^2/mu) / tau
/// (x, v) <- (x - theta s, v - theta t)
/// ```
///
/// When `sqrt(tau)` falls to `sigma_tol` times the scale of the inputs
/// (see `SolverConfig::sigma_tol`), `(a, v + (l - b)/mu)` is a Kuhn-Tucker
/// point and is returned in `solution`.
pub fn pd_step(
    p: &PDPoint,
    prob: &PDProblem,
    gamma: f64,
    mu: f64,
    lambda: f64,
    sigma_tol: f64,
) -> Result<StepOutput> {
    check_step_params(gamma, mu, lambda)?;
    let lv = prob.l.apply_adjoint(&p.v)?;
    let mut wa = p.x.clone();
    wa.axpy(-gamma, &lv)?;
    let a = prob.a.resolve(gamma, &wa)?;
    let l = prob.l.apply(&p.x)?;
    let mut wb = l.clone();
    wb.axpy(mu, &p.v)?;
    let b = prob.b.resolve(mu, &wb)?;
    finish_step(
        p,
        a,
        b,
        &l,
        gamma,
        mu,
        lambda,
        sigma_tol,
        lv.norm(),
        |x| prob.l.apply(x),
        |y| prob.l.apply_adjoint(y),
    )
}

pub fn solve(prob: &PDProblem, init: PDPoint, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_observed(prob, init, cfg, &mut no_observer)
}

pub fn solve_observed(
    prob: &PDProblem,
    init: PDPoint,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    check_init(&init, &prob.l)?;
    Driver { cfg, link: &prob.l }.run(
        init,
        |n| cfg.params(n),
        |p, g, m, l| pd_step(p, prob, g, m, l, cfg.sigma_tol),
        |p| prob.kt_residual(p),
        observer,
    )
}

fn check_init(init: &PDPoint, l: &LinearMap) -> Result<()> {
    l.in_shape().ensure_eq(init.x.shape())?;
    l.out_shape().ensure_eq(init.v.shape())
}

/// `0 in L* B L x`: the resolvent rule with `A = 0`, unit scalings and a fixed
/// relaxation, so that `a = x - L* v` needs no resolvent at all.
pub fn solve_normal_cone_free(
    b: &MonotoneOp,
    l: &LinearMap,
    init: PDPoint,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_normal_cone_free_observed(b, l, init, lambda, cfg, &mut no_observer)
}

pub fn solve_normal_cone_free_observed(
    b: &MonotoneOp,
    l: &LinearMap,
    init: PDPoint,
    lambda: f64,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    check_step_params(1.0, 1.0, lambda)?;
    b.shape().ensure_eq(l.out_shape())?;
    check_init(&init, l)?;
    let zero = MonotoneOp::zero(l.in_shape());
    Driver { cfg, link: l }.run(
        init,
        |_| Ok((1.0, 1.0, lambda)),
        |p, _, _, lam| {
            let lv = l.apply_adjoint(&p.v)?;
            let mut a = p.x.clone();
            a.axpy(-1.0, &lv)?;
            let a = GraphPoint::of_zero_operator(a);
            let lx = l.apply(&p.x)?;
            let mut wb = lx.clone();
            wb.axpy(1.0, &p.v)?;
            let gb = b.resolve(1.0, &wb)?;
            finish_step(
                p,
                a,
                gb,
                &lx,
                1.0,
                1.0,
                lam,
                cfg.sigma_tol,
                lv.norm(),
                |x| l.apply(x),
                |y| l.apply_adjoint(y),
            )
        },
        |p| kt_residual(p, &zero, b, l),
        observer,
    )
}

/// `0 in A x + B x`: the resolvent rule with `L = Id`.
pub fn solve_sum(
    a: &MonotoneOp,
    b: &MonotoneOp,
    init: PDPoint,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_sum_observed(a, b, init, cfg, &mut no_observer)
}

pub fn solve_sum_observed(
    a: &MonotoneOp,
    b: &MonotoneOp,
    init: PDPoint,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    a.shape().ensure_eq(b.shape())?;
    let id = LinearMap::identity(a.shape());
    check_init(&init, &id)?;
    Driver { cfg, link: &id }.run(
        init,
        |n| cfg.params(n),
        |p, g, m, lam| {
            check_step_params(g, m, lam)?;
            let mut wa = p.x.clone();
            wa.axpy(-g, &p.v)?;
            let ga = a.resolve(g, &wa)?;
            let mut wb = p.x.clone();
            wb.axpy(m, &p.v)?;
            let gb = b.resolve(m, &wb)?;
            finish_step(
                p,
                ga,
                gb,
                &p.x,
                g,
                m,
                lam,
                cfg.sigma_tol,
                p.v.norm(),
                |x| Ok(x.clone()),
                |y| Ok(y.clone()),
            )
        },
        |p| kt_residual(p, a, b, &id),
        observer,
    )
}

/// `<x - a, a* + L* v> + <L x - b, b* - v>`
pub fn selection_lhs(p: &PDPoint, a: &GraphPoint, b: &GraphPoint, l: &LinearMap) -> Result<f64> {
    let first = p
        .x
        .sub(a.point())?
        .inner(&a.image().add(&l.apply_adjoint(&p.v)?)?)?;
    let second = l
        .apply(&p.x)?
        .sub(b.point())?
        .inner(&b.image().sub(&p.v)?)?;
    Ok(first + second)
}

/// Whether `(a, b)` satisfies the selection inequality at `p`:
/// `selection_lhs >= alpha (||a* + L* b*||^2 + ||L a - b||^2)`, with `1e-10` slack.
pub fn check_selection_quality(
    p: &PDPoint,
    a: &GraphPoint,
    b: &GraphPoint,
    l: &LinearMap,
    alpha: f64,
) -> Result<bool> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let lhs = selection_lhs(p, a, b, l)?;
    let s = a.image().add(&l.apply_adjoint(b.image())?)?;
    let t = l.apply(a.point())?.sub(b.point())?;
    let rhs = alpha * (s.norm_sq() + t.norm_sq());
    Ok(lhs >= rhs - 1e-10)
}

/// Selection constant guaranteed for the resolvent rule when `||L|| <= norm_bound`.
/// Only used to test the selection inequality; the solvers never see a norm.
pub fn alpha_lower_bound(epsilon: f64, norm_bound: f64) -> f64 {
    let n2 = norm_bound * norm_bound;
    epsilon / (1.0 + n2 + 2.0 * (1.0 - epsilon * epsilon) * n2.max(1.0))
}

/// Supplies the two graph points used at each iteration of the generic engine.
pub trait Selector {
    fn select(&mut self, n: usize, p: &PDPoint, prob: &PDProblem) -> Result<(GraphPoint, GraphPoint)>;
}

/// The resolvent rule as a [`Selector`] with fixed scalings.
pub struct ResolventSelector {
    pub gamma: f64,
    pub mu: f64,
}

impl Selector for ResolventSelector {
    fn select(&mut self, _n: usize, p: &PDPoint, prob: &PDProblem) -> Result<(GraphPoint, GraphPoint)> {
        let lv = prob.l.apply_adjoint(&p.v)?;
        let mut wa = p.x.clone();
        wa.axpy(-self.gamma, &lv)?;
        let a = prob.a.resolve(self.gamma, &wa)?;
        let mut wb = prob.l.apply(&p.x)?;
        wb.axpy(self.mu, &p.v)?;
        let b = prob.b.resolve(self.mu, &wb)?;
        Ok((a, b))
    }
}

/// Relaxed projection onto the half-space built from arbitrary graph points.
/// Terminates with `(a, b*)` when the half-space normal vanishes.
pub fn conceptual_step(
    p: &PDPoint,
    a: GraphPoint,
    b: GraphPoint,
    l: &LinearMap,
    lambda: f64,
    sigma_tol: f64,
) -> Result<StepOutput> {
    check_step_params(1.0, 1.0, lambda)?;
    let h = build_halfspace(&a, &b, l)?;
    let s_norm2 = h.s_primal.norm_sq();
    let t_norm2 = h.s_dual.norm_sq();
    let tau = s_norm2 + t_norm2;
    let gap = h.lhs(p)? - h.eta;
    let mut diag = StepDiag {
        s_norm2,
        t_norm2,
        tau,
        theta: 0.0,
        delta: 0.0,
        numerator: gap,
        primal_gap: p.x.dist(a.point())?,
        dual_gap: l.apply(&p.x)?.dist(b.point())?,
    };
    let threshold = sigma_tol * (1.0 + p.norm());
    if tau <= threshold * threshold {
        let solution = PDPoint::new(a.point().clone(), b.image().clone());
        return Ok(StepOutput {
            next: p.clone(),
            diag,
            a,
            b,
            solution: Some(solution),
        });
    }
    let sigma = tau.sqrt();
    let delta = (gap / sigma).max(0.0);
    let theta = lambda * delta / sigma;
    diag.delta = delta;
    diag.theta = theta;
    let next = p.moved(theta, &h.s_primal, &h.s_dual)?;
    Ok(StepOutput {
        next,
        diag,
        a,
        b,
        solution: None,
    })
}

/// Generic Fejér engine driven by a caller-supplied selection of graph points.
pub fn solve_with_selector(
    prob: &PDProblem,
    init: PDPoint,
    cfg: &SolverConfig,
    selector: &mut dyn Selector,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<SolveReport> {
    check_init(&init, &prob.l)?;
    let mut n = 0;
    Driver { cfg, link: &prob.l }.run(
        init,
        |k| cfg.params(k),
        |p, _, _, lam| {
            let (a, b) = selector.select(n, p, prob)?;
            n += 1;
            conceptual_step(p, a, b, &prob.l, lam, cfg.sigma_tol)
        },
        |p| prob.kt_residual(p),
        observer,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Shape;
    use crate::solver::Status;
    use nalgebra::{DMatrix, DVector};

    fn s(x: f64) -> BlockVector {
        BlockVector::scalar(x)
    }

    fn pd(x: f64, v: f64) -> PDPoint {
        PDPoint::new(s(x), s(v))
    }

    fn ident_problem() -> PDProblem {
        let one = Shape::single(1);
        PDProblem::new(MonotoneOp::identity(&one), MonotoneOp::identity(&one), LinearMap::identity(&one)).unwrap()
    }

    #[test]
    fn kt_point_terminates_immediately() {
        let out = pd_step(&pd(0.0, 0.0), &ident_problem(), 0.3, 7.0, 1.0, 1e-14).unwrap();
        assert_eq!(out.solution, Some(pd(0.0, 0.0)));
        assert_eq!(out.diag.tau, 0.0);
    }

    #[test]
    fn hand_executed_step() {
        let out = pd_step(&pd(1.0, 0.0), &ident_problem(), 1.0, 1.0, 1.0, 1e-14).unwrap();
        assert_eq!(out.a.point().as_slice(), &[0.5]);
        assert_eq!(out.b.point().as_slice(), &[0.5]);
        let d = out.diag;
        assert_eq!((d.s_norm2, d.t_norm2, d.tau, d.numerator, d.theta), (1.0, 0.0, 1.0, 0.5, 0.5));
        assert_eq!(out.next, pd(0.5, 0.0));
        assert!(out.solution.is_none());
    }

    #[test]
    fn iterates_halve() {
        let prob = ident_problem();
        let mut p = pd(1.0, 0.0);
        for n in 1..=30 {
            p = pd_step(&p, &prob, 1.0, 1.0, 1.0, 1e-14).unwrap().next;
            assert_eq!(p, pd(0.5f64.powi(n), 0.0));
        }
    }

    #[test]
    fn solve_identity_problem() {
        let cfg = SolverConfig::default().with_params(1.0, 1.0, 1.0);
        let rep = solve(&ident_problem(), pd(1.0, 0.0), &cfg).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!(rep.iterations <= 60);
        assert!(rep.kt_residual <= 1e-8);
        assert_eq!(rep.trace.len(), rep.iterations);
    }

    #[test]
    fn solve_small_affine_against_dense_oracle() {
        // A x = P x + c, B y = Q y + d, L dense: x solves (P + L^T Q L) x = -c - L^T d
        let p_mat = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q_mat = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.8]);
        let l_mat = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0]);
        let c = vec![1.0, -2.0];
        let d = vec![0.5, 0.0, -1.0];
        let prob = PDProblem::new_strict(
            MonotoneOp::affine(p_mat.clone(), c.clone()).unwrap(),
            MonotoneOp::affine(q_mat.clone(), d.clone()).unwrap(),
            LinearMap::dense(l_mat.clone()),
        )
        .unwrap();
        let lhs = &p_mat + l_mat.transpose() * &q_mat * &l_mat;
        let rhs = -DVector::from_vec(c) - l_mat.transpose() * DVector::from_vec(d.clone());
        let x_bar = lhs.lu().solve(&rhs).unwrap();
        let rep = solve(&prob, prob.zero_point(), &SolverConfig::default()).unwrap();
        assert!(rep.succeeded());
        let err = rep.point.x.as_slice().iter().zip(x_bar.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn feasibility_through_box_indicator() {
        let two = Shape::single(2);
        let prob = PDProblem::new(
            MonotoneOp::zero(&two),
            MonotoneOp::box_indicator(vec![0.0; 2], vec![0.0; 2]).unwrap(),
            LinearMap::identity(&two),
        )
        .unwrap();
        let init = PDPoint::new(BlockVector::from_vec(vec![3.0, -1.0]), BlockVector::zeros(&two));
        let rep = solve(&prob, init, &SolverConfig::default()).unwrap();
        assert!(rep.succeeded());
        assert!(rep.point.x.norm() < 1e-6);
    }

    #[test]
    fn selection_quality_examples() {
        let one = Shape::single(1);
        let l = LinearMap::scalar(2.0, &one);
        // KT-consistent witnesses: a* = -L* b*, b = L a
        let a = GraphPoint::new_unchecked(s(1.0), s(-1.0)).unwrap();
        let b = GraphPoint::new_unchecked(s(2.0), s(0.5)).unwrap();
        let p = pd(-3.0, 4.0);
        assert!(selection_lhs(&p, &a, &b, &l).unwrap().abs() < 1e-14);
        assert!(check_selection_quality(&p, &a, &b, &l, 10.0).unwrap());

        let prob = ident_problem();
        let out = pd_step(&pd(1.0, 0.0), &prob, 1.0, 1.0, 1.0, 1e-14).unwrap();
        assert_eq!(selection_lhs(&pd(1.0, 0.0), &out.a, &out.b, prob.l()).unwrap(), 0.5);
        assert!(check_selection_quality(&pd(1.0, 0.0), &out.a, &out.b, prob.l(), 0.1).unwrap());
    }

    #[test]
    fn junk_points_can_fail_selection() {
        let one = Shape::single(1);
        let l = LinearMap::identity(&one);
        let mut rng = crate::rng::SeededRng::new(3);
        let mut failures = 0;
        for _ in 0..200 {
            let a = GraphPoint::new_unchecked(s(rng.symmetric()), s(rng.symmetric())).unwrap();
            let b = GraphPoint::new_unchecked(s(rng.symmetric()), s(rng.symmetric())).unwrap();
            let p = pd(rng.symmetric(), rng.symmetric());
            if !check_selection_quality(&p, &a, &b, &l, 0.1).unwrap() {
                failures += 1;
            }
        }
        assert!(failures > 0);
        assert!(check_selection_quality(&pd(0.0, 0.0), &GraphPoint::new_unchecked(s(0.0), s(0.0)).unwrap(), &GraphPoint::new_unchecked(s(0.0), s(0.0)).unwrap(), &l, 0.0).is_err());
    }

    #[test]
    fn debug_checks_pass_on_resolvent_rule() {
        let cfg = SolverConfig { debug_checks: true, ..SolverConfig::default() };
        let rep = solve(&ident_problem(), pd(3.0, -2.0), &cfg).unwrap();
        assert!(rep.succeeded());
    }

    #[test]
    fn theta_positive_while_running() {
        let rep = solve(&ident_problem(), pd(3.0, -2.0), &SolverConfig::default()).unwrap();
        for d in &rep.trace {
            assert!(d.theta > 0.0 && d.tau == d.s_norm2 + d.t_norm2);
        }
    }

    #[test]
    fn normal_cone_free_matches_generic_bitwise() {
        let two = Shape::single(2);
        let l = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]));
        let b = MonotoneOp::l1(2, 0.3).translated(&BlockVector::from_vec(vec![1.0, -1.0])).unwrap();
        let prob = PDProblem::new(MonotoneOp::zero(&two), b.clone(), l.clone()).unwrap();
        let init = PDPoint::new(BlockVector::from_vec(vec![2.0, 0.5]), BlockVector::from_vec(vec![-1.0, 0.25]));
        let mut cfg = SolverConfig::default().with_params(1.0, 1.0, 1.3);
        cfg.max_iters = 10;
        let mut generic = Vec::new();
        solve_observed(&prob, init.clone(), &cfg, &mut |e| generic.push(e.step.next.clone())).unwrap();
        let mut special = Vec::new();
        solve_normal_cone_free_observed(&b, &l, init, 1.3, &cfg, &mut |e| special.push(e.step.next.clone())).unwrap();
        assert_eq!(generic.len(), 10);
        assert_eq!(generic, special);
    }

    #[test]
    fn normal_cone_free_identity_decay() {
        let one = Shape::single(1);
        let b = MonotoneOp::identity(&one);
        let l = LinearMap::identity(&one);
        let cfg = SolverConfig::default();
        let rep = solve_normal_cone_free(&b, &l, pd(1.0, 0.0), 1.0, &cfg).unwrap();
        let prob = PDProblem::new(MonotoneOp::zero(&one), b.clone(), l.clone()).unwrap();
        let oracle = solve(&prob, pd(1.0, 0.0), &cfg.clone().with_params(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(rep.iterations, oracle.iterations);
        assert_eq!(rep.point, oracle.point);
        assert!(rep.kt_residual <= 1e-8);

        let at_kt = solve_normal_cone_free(&b, &l, pd(0.0, 0.0), 1.0, &cfg).unwrap();
        assert_eq!((at_kt.status, at_kt.iterations), (Status::Terminated, 0));
        assert!(solve_normal_cone_free(&b, &l, pd(0.0, 0.0), 2.0, &cfg).is_err());
    }

    #[test]
    fn sum_matches_generic_bitwise() {
        let one = Shape::single(1);
        let (a, b) = (MonotoneOp::identity(&one), MonotoneOp::identity(&one));
        let prob = PDProblem::new(a.clone(), b.clone(), LinearMap::identity(&one)).unwrap();
        let cfg = SolverConfig::default();
        let mut generic = Vec::new();
        let r1 = solve_observed(&prob, pd(1.0, 0.0), &cfg, &mut |e| generic.push(e.step.next.clone())).unwrap();
        let mut special = Vec::new();
        let r2 = solve_sum_observed(&a, &b, pd(1.0, 0.0), &cfg, &mut |e| special.push(e.step.next.clone())).unwrap();
        assert_eq!(generic, special);
        assert_eq!(r1.point, r2.point);
    }

    #[test]
    fn sum_of_abs_and_affine() {
        // 0 in sign(x) + x - 2 at x = 1, with v = B(1) = -1
        let a = MonotoneOp::l1(1, 1.0);
        let b = MonotoneOp::affine(DMatrix::from_element(1, 1, 1.0), vec![-2.0]).unwrap();
        let cfg = SolverConfig::default();
        let rep = solve_sum(&a, &b, pd(0.0, 0.0), &cfg).unwrap();
        assert!(rep.succeeded());
        assert!(rep.point.dist(&pd(1.0, -1.0)).unwrap() < 1e-6);

        let mut short = cfg.clone();
        short.max_iters = 200;
        short.residual_tol = 1e-6;
        let rep = solve_sum(&a, &b, pd(1.0, 1.0), &short).unwrap();
        assert!(rep.kt_residual <= 1e-6, "{}", rep.kt_residual);
    }

    #[test]
    fn selector_engine_tracks_resolvent_rule() {
        let prob = ident_problem();
        let cfg = SolverConfig::default().with_params(1.0, 1.0, 1.5);
        let mut sel = ResolventSelector { gamma: 1.0, mu: 1.0 };
        let mut a = Vec::new();
        solve_with_selector(&prob, pd(2.0, 1.0), &cfg, &mut sel, &mut |e| a.push(e.step.next.clone())).unwrap();
        let mut b = Vec::new();
        solve_observed(&prob, pd(2.0, 1.0), &cfg, &mut |e| b.push(e.step.next.clone())).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!(p.max_abs_diff(q).unwrap() < 1e-12);
        }
    }

    #[test]
    fn operator_misbehavior_is_a_numeric_error() {
        let one = Shape::single(1);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let bad = MonotoneOp::from_resolvent(one.clone(), move |_, w| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 6 {
                BlockVector::scalar(f64::NAN)
            } else {
                w.scale(0.5)
            }
        });
        let prob = PDProblem::new(bad, MonotoneOp::identity(&one), LinearMap::identity(&one)).unwrap();
        match solve(&prob, pd(1.0, 1.0), &SolverConfig::default()) {
            Err(Error::NonFinite { iteration, .. }) => assert!(iteration >= 1),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn strict_construction_rejects_bad_adjoint() {
        let one = Shape::single(1);
        let l = LinearMap::dense_with_adjoint(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!(PDProblem::new_strict(MonotoneOp::zero(&one), MonotoneOp::zero(&one), l).is_err());
        assert!(PDProblem::new(MonotoneOp::zero(&Shape::single(2)), MonotoneOp::zero(&one), LinearMap::identity(&one)).is_err());
    }

    #[test]
    fn alpha_bound_formula() {
        assert!((alpha_lower_bound(0.5, 1.0) - 0.5 / (2.0 + 2.0 * 0.75)).abs() < 1e-15);
    }
}
