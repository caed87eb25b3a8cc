//! Lagrange multipliers and first-order optimality residuals.
//!
//! Multipliers are on the Lagrangian scale without the ½ of the objective:
//! stationarity at internal `n` reads
//! `G_n + M_n - M_odd - M_even = 0` with `G_x = ∇t_x`. `M_x` guards the
//! slack returned by [`crate::objective::slack`]; even leaves carry
//! `M = 0`.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{try_inverse, SymMatrix, Tolerance};
use crate::objective::{check_theta_shape, slack, InfoObjective, ThetaAssignment};
use crate::tree::{Node, NodeMap, ProblemInstance};

/// One multiplier per node of the full tree.
pub type MultiplierSet = NodeMap<SymMatrix>;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeResidual {
    pub node: Node,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KktResiduals {
    /// `‖G_n + M_n - M_odd - M_even‖_max` per internal node.
    pub stationarity: Vec<NodeResidual>,
    /// `max(‖M s‖_max, ‖s M‖_max)` per slack.
    pub complementarity: Vec<NodeResidual>,
    /// `max(0, -λ_min(M))` per multiplier.
    pub dual_infeasibility: Vec<NodeResidual>,
    /// `max(0, -λ_min(s))` per slack.
    pub primal_infeasibility: Vec<NodeResidual>,
    /// Largest entry of any even-leaf multiplier.
    pub even_leaf: f64,
}

fn worst(v: &[NodeResidual]) -> f64 {
    v.iter().fold(0.0, |m, r| m.max(r.value))
}

impl KktResiduals {
    pub fn max_stationarity(&self) -> f64 {
        worst(&self.stationarity)
    }
    pub fn max_complementarity(&self) -> f64 {
        worst(&self.complementarity)
    }
    pub fn max_dual_infeasibility(&self) -> f64 {
        worst(&self.dual_infeasibility)
    }
    pub fn max_primal_infeasibility(&self) -> f64 {
        worst(&self.primal_infeasibility)
    }
    pub fn max(&self) -> f64 {
        self.max_stationarity()
            .max(self.max_complementarity())
            .max(self.max_dual_infeasibility())
            .max(self.max_primal_infeasibility())
            .max(self.even_leaf)
    }
}

/// Nodes that own a slack: every internal node plus the odd leaves.
pub fn slack_nodes(levels: usize) -> impl Iterator<Item = Node> {
    crate::tree::nodes(levels).filter(move |n| n.k < levels || n.is_odd())
}

/// Multipliers that the stationarity equation at `n` subtracts.
pub(crate) fn child_slack_nodes(levels: usize, n: Node) -> impl Iterator<Item = Node> {
    [n.odd_child(), n.even_child()].into_iter().filter(move |c| c.k < levels || c.is_odd())
}

/// `G_n + M_n - M_odd - M_even` for every internal node.
pub fn stationarity_residuals(obj: &InfoObjective, th: &ThetaAssignment, ms: &MultiplierSet) -> NodeMap<SymMatrix> {
    th.map(|n, t| {
        let (_, g) = obj.node_term(n, t);
        let mut r = &g + ms.get(n);
        r = &r - ms.get(n.odd_child());
        &r - ms.get(n.even_child())
    })
}

/// Multipliers at `th`: zero on slacks whose smallest eigenvalue exceeds
/// `slack_threshold`, `2 μ s^{-1}` on the rest, and read off the stationarity
/// equations where the slack is numerically singular (or `mu = 0`).
pub fn recover_multipliers(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    mu: f64,
    slack_threshold: f64,
    tol: &Tolerance,
) -> Result<MultiplierSet, Error> {
    check_theta_shape(inst, th)?;
    let obj = InfoObjective::new(inst)?;
    let levels = inst.levels;
    let m = inst.m;
    let mut ms: MultiplierSet = NodeMap::from_fn(levels, |_| SymMatrix::zeros(m));
    let mut singular: NodeMap<bool> = NodeMap::from_fn(levels, |_| false);
    for j in slack_nodes(levels) {
        let s = slack(inst, th, j).expect("slack node");
        let lmin = s.min_eigenvalue();
        if lmin > slack_threshold {
            continue;
        }
        if lmin < -tol.psd_slack(&s) {
            return Err(Error::InfeasibleTheta { node: j });
        }
        let tiny = lmin <= tol.psd_slack(&s) || mu <= 0.0;
        match (tiny, try_inverse(&s)) {
            (false, Some(inv)) => ms.set(j, inv.scale(2.0 * mu)),
            _ => singular.set(j, true),
        }
    }
    let g = th.map(|n, t| obj.node_term(n, t).1);
    // Top slacks first: they appear only in their parent's equation.
    for i in (1..=1usize << (levels - 1)).step_by(2) {
        let leaf = Node::new(levels, i);
        if *singular.get(leaf) {
            let n = leaf.parent().expect("leaf has a parent");
            let mut v = g.get(n) + ms.get(n);
            v = &v - ms.get(Node::new(levels, i + 1));
            ms.set(leaf, v);
        }
    }
    for n in crate::tree::nodes(levels - 1).collect::<Vec<_>>().into_iter().rev() {
        if *singular.get(n) {
            let mut v = -g.get(n);
            for c in child_slack_nodes(levels, n) {
                v = &v + ms.get(c);
            }
            ms.set(n, v);
        }
    }
    Ok(ms)
}

pub fn kkt_residual(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    ms: &MultiplierSet,
) -> Result<KktResiduals, Error> {
    check_theta_shape(inst, th)?;
    if ms.levels() != inst.levels {
        return Err(Error::DimensionMismatch { expected: inst.levels, found: ms.levels() });
    }
    let obj = InfoObjective::new(inst)?;
    Ok(kkt_residual_with(&obj, inst, th, ms))
}

pub(crate) fn kkt_residual_with(
    obj: &InfoObjective,
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    ms: &MultiplierSet,
) -> KktResiduals {
    let levels = inst.levels;
    let stationarity = stationarity_residuals(obj, th, ms)
        .iter()
        .map(|(node, r)| NodeResidual { node, value: r.max_abs() })
        .collect();
    let mut complementarity = Vec::new();
    let mut primal = Vec::new();
    for j in slack_nodes(levels) {
        let s = slack(inst, th, j).expect("slack node");
        let mj = ms.get(j);
        let ms_prod = mj.as_mat() * s.as_mat();
        let value = crate::linalg::max_abs(&ms_prod).max(crate::linalg::max_abs(&ms_prod.transpose()));
        complementarity.push(NodeResidual { node: j, value });
        primal.push(NodeResidual { node: j, value: (-s.min_eigenvalue()).max(0.0) });
    }
    let dual_infeasibility = ms
        .iter()
        .map(|(node, mj)| NodeResidual { node, value: (-mj.min_eigenvalue()).max(0.0) })
        .collect();
    let even_leaf = ms
        .iter()
        .filter(|(n, _)| n.k == levels && !n.is_odd())
        .fold(0.0f64, |acc, (_, mj)| acc.max(mj.max_abs()));
    KktResiduals { stationarity, complementarity, dual_infeasibility, primal_infeasibility: primal, even_leaf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::default_chain;

    fn scalar(sigma: f64, d: &[f64]) -> ProblemInstance {
        let levels = (d.len() + 1).trailing_zeros() as usize;
        let map = NodeMap::from_vec(levels, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
        ProblemInstance::new(SymMatrix::scalar(sigma), levels, map).unwrap()
    }

    fn theta1(x: f64) -> ThetaAssignment {
        NodeMap::from_vec(1, alloc::vec![SymMatrix::scalar(x)]).unwrap()
    }

    #[test]
    fn top_active_multiplier_from_stationarity() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[0.25, 1.0, 1.0]);
        let th = theta1(1.0);
        let ms = recover_multipliers(&inst, &th, 0.0, 1e-7, &tol).unwrap();
        assert_eq!(ms.get(Node::ROOT).get(0, 0), 0.0);
        assert!((ms.get(Node::new(2, 1)).get(0, 0) - 0.75).abs() < 1e-14);
        assert_eq!(ms.get(Node::new(2, 2)).get(0, 0), 0.0);
        let r = kkt_residual(&inst, &th, &ms).unwrap();
        assert!(r.max() < 1e-14);
    }

    #[test]
    fn interior_point_has_zero_multipliers() {
        let tol = Tolerance::default();
        // f'(θ) = 1/(θ+s0) - 1/(θ+s1) - 1/(θ+s2), zero at θ = sqrt((s1-s0)(s2-s0)) - s0.
        let (s0, s1) = (0.2, 1.0);
        let theta: f64 = (s1 - s0) - s0;
        let d = |s: f64| 1.0 / (1.0 / s + 1.0);
        let inst = scalar(1.0, &[d(s0), d(s1), d(s1)]);
        let th = theta1(theta);
        let ms = recover_multipliers(&inst, &th, 0.0, 1e-7, &tol).unwrap();
        assert!(ms.values().iter().all(|m| m.is_zero()));
        let r = kkt_residual(&inst, &th, &ms).unwrap();
        assert!(r.max_stationarity() < 1e-12);
    }

    #[test]
    fn wrong_multiplier_sign_is_reported() {
        let inst = scalar(1.0, &[0.25, 1.0, 1.0]);
        let th = theta1(1.0);
        let mut ms: MultiplierSet = NodeMap::from_fn(2, |_| SymMatrix::zeros(1));
        ms.set(Node::new(2, 1), SymMatrix::scalar(-0.75));
        let r = kkt_residual(&inst, &th, &ms).unwrap();
        assert!((r.max_dual_infeasibility() - 0.75).abs() < 1e-15);
        assert!(r.max_stationarity() > 1.0);
    }

    #[test]
    fn barrier_estimates_are_scaled_inverses() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[0.25, 0.5, 0.5]);
        let th = default_chain(&inst, 0.5);
        let ms = recover_multipliers(&inst, &th, 1e-3, 10.0, &tol).unwrap();
        assert!((ms.get(Node::ROOT).get(0, 0) - 2e-3 / 0.25).abs() < 1e-15);
        assert!((ms.get(Node::new(2, 1)).get(0, 0) - 2e-3 / 0.75).abs() < 1e-15);
    }
}
