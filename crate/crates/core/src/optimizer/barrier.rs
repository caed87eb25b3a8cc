//! Log-det barrier on the chain slacks and its limited-memory ascent.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{chol_logdet, SymMatrix};
use crate::objective::{check_theta_shape, slack, InfoObjective, ThetaAssignment};
use crate::optimizer::kkt::{child_slack_nodes, MultiplierSet};
use crate::tree::{NodeMap, ProblemInstance};

pub(crate) struct Barrier<'a> {
    pub obj: &'a InfoObjective,
    pub inst: &'a ProblemInstance,
}

pub(crate) struct BarrierPoint {
    /// Barrier value `f + μ Σ log det s_j`.
    pub value: f64,
    pub grad: NodeMap<SymMatrix>,
    /// Slack inverses per multiplier node.
    pub slack_inv: NodeMap<Option<SymMatrix>>,
    /// Scale for relative gradient tests.
    pub scale: f64,
}

impl<'a> Barrier<'a> {
    /// `None` when some slack is not positive definite.
    pub fn eval(&self, th: &ThetaAssignment, mu: f64) -> Option<BarrierPoint> {
        let levels = self.inst.levels;
        let mut logdets = 0.0;
        let mut slack_inv: NodeMap<Option<SymMatrix>> = NodeMap::from_fn(levels, |_| None);
        for j in crate::optimizer::kkt::slack_nodes(levels) {
            let s = crate::objective::slack(self.inst, th, j)?;
            let c = s.cholesky()?;
            logdets += chol_logdet(&c);
            slack_inv.set(j, Some(SymMatrix::from_mat(c.inverse())));
        }
        let (objective, g) = self.obj.value_and_stationarity(th);
        if !objective.is_finite() {
            return None;
        }
        let mut scale = 1.0f64;
        let grad = g.map(|n, gn| {
            let mut b = slack_inv.get(n).clone().expect("internal slack");
            for c in child_slack_nodes(levels, n) {
                b = &b - slack_inv.get(c).as_ref().expect("child slack");
            }
            scale = scale.max(gn.max_abs());
            &gn.scale(0.5) + &b.scale(mu)
        });
        Some(BarrierPoint { value: objective + mu * logdets, grad, slack_inv, scale })
    }
}

/// `f(Θ) + μ Σ_j log det s_j(Θ)` with `f` the sum-rate objective.
pub fn barrier_value(inst: &ProblemInstance, th: &ThetaAssignment, mu: f64) -> Result<f64, Error> {
    check_theta_shape(inst, th)?;
    let obj = InfoObjective::new(inst)?;
    let b = Barrier { obj: &obj, inst };
    b.eval(th, mu).map(|p| p.value).ok_or_else(|| infeasible_node(inst, th))
}

/// Gradient of [`barrier_value`] as one symmetric matrix per internal node,
/// in the trace pairing `dF = Σ_n tr(grad_n dΘ_n)`.
pub fn barrier_gradient(inst: &ProblemInstance, th: &ThetaAssignment, mu: f64) -> Result<ThetaAssignment, Error> {
    check_theta_shape(inst, th)?;
    let obj = InfoObjective::new(inst)?;
    let b = Barrier { obj: &obj, inst };
    b.eval(th, mu).map(|p| p.grad).ok_or_else(|| infeasible_node(inst, th))
}

fn infeasible_node(inst: &ProblemInstance, th: &ThetaAssignment) -> Error {
    for j in crate::optimizer::kkt::slack_nodes(inst.levels) {
        if let Some(s) = crate::objective::slack(inst, th, j) {
            if s.cholesky().is_none() {
                return Error::InfeasibleTheta { node: j };
            }
        }
    }
    Error::SingularTerm { node: crate::tree::Node::ROOT }
}

/// `M_j = 2 μ s_j^{-1}`: barrier stationarity times two is the Lagrangian
/// stationarity with these multipliers.
pub(crate) fn barrier_multipliers(p: &BarrierPoint, mu: f64, m: usize) -> MultiplierSet {
    p.slack_inv.map(|_, s| match s {
        Some(inv) => inv.scale(2.0 * mu),
        None => SymMatrix::zeros(m),
    })
}

fn dot(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn axpy(x: &[SymMatrix], t: f64, d: &[SymMatrix]) -> Vec<SymMatrix> {
    x.iter().zip(d).map(|(a, b)| a + &b.scale(t)).collect()
}

fn max_abs(a: &[SymMatrix]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.max_abs()))
}

/// Linear part of the slack at `j` applied to the direction `d`.
pub(crate) fn slack_direction(inst: &ProblemInstance, d: &ThetaAssignment, j: crate::tree::Node) -> SymMatrix {
    if j.k == inst.levels {
        -d.get(j.parent().expect("leaf has a parent"))
    } else {
        match j.parent() {
            None => d.get(j).clone(),
            Some(p) => d.get(j) - d.get(p),
        }
    }
}

pub(crate) struct InnerResult {
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes the barrier at fixed `mu` from a strictly feasible `th`,
/// in place. Directions come from a two-loop L-BFGS recursion in the trace
/// inner product; steps backtrack out of infeasibility, then to Armijo.
pub(crate) fn ascend(
    barrier: &Barrier<'_>,
    th: &mut ThetaAssignment,
    mu: f64,
    grad_tol: f64,
    max_inner: usize,
) -> InnerResult {
    const MEMORY: usize = 12;
    const ARMIJO: f64 = 1e-4;
    let levels = th.levels();
    let mut point = match barrier.eval(th, mu) {
        Some(p) => p,
        None => return InnerResult { iterations: 0, converged: false },
    };
    let mut hist: VecDeque<(Vec<SymMatrix>, Vec<SymMatrix>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut x: Vec<SymMatrix> = th.values().to_vec();
    for it in 0..max_inner {
        let g: Vec<SymMatrix> = point.grad.values().to_vec();
        if max_abs(&g) <= grad_tol * point.scale {
            *th = NodeMap::from_vec(levels, x).expect("shape");
            return InnerResult { iterations: it, converged: true };
        }
        // Minimize -F: descent direction d = -H(-g) = H g.
        let mut q: Vec<SymMatrix> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q = axpy(&q, -a, y);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / (1.0 + max_abs(&g)),
        };
        let mut r: Vec<SymMatrix> = q.iter().map(|v| v.scale(gamma)).collect();
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            r = axpy(&r, a - b, s);
        }
        let mut d: Vec<SymMatrix> = r.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            hist.clear();
            let sc = 1.0 / (1.0 + max_abs(&g));
            d = g.iter().map(|v| v.scale(sc)).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        // Cap the step at 99% of the distance to the slack boundary.
        let cur = NodeMap::from_vec(levels, x.clone()).expect("shape");
        let dmap = NodeMap::from_vec(levels, d.clone()).expect("shape");
        for j in crate::optimizer::kkt::slack_nodes(barrier.inst.levels) {
            let s = slack(barrier.inst, &cur, j).expect("slack node");
            let ds = slack_direction(barrier.inst, &dmap, j);
            if let Some(a) = crate::linalg::max_step(&s, &ds, f64::INFINITY) {
                t = f64::min(t, 0.99 * a);
            }
        }
        let mut accepted = None;
        while t > 1e-20 {
            let xt = axpy(&x, t, &d);
            let tht = NodeMap::from_vec(levels, xt.clone()).expect("shape");
            if let Some(pt) = barrier.eval(&tht, mu) {
                if pt.value >= point.value + ARMIJO * t * slope {
                    accepted = Some((xt, pt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xt, pt)) = accepted else {
            *th = NodeMap::from_vec(levels, x).expect("shape");
            return InnerResult { iterations: it, converged: false };
        };
        let s: Vec<SymMatrix> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<SymMatrix> = point.grad.values().iter().zip(pt.grad.values()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 && sy.is_finite() {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xt;
        point = pt;
    }
    *th = NodeMap::from_vec(levels, x).expect("shape");
    InnerResult { iterations: max_inner, converged: false }
}
