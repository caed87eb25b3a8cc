//! Enhanced covariances `Σ̃` built from a KKT point and the identities they satisfy.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{max_abs, try_inverse, try_logdet, Mat, SymMatrix, Tolerance};
use crate::objective::{sigma_slacks, InfoObjective, ThetaAssignment};
use crate::optimizer::kkt::MultiplierSet;
use crate::tree::{Node, NodeMap, ProblemInstance};

/// `Σ̃` on every node of the full tree.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EnhancedSigmas {
    pub sig_tilde: NodeMap<SymMatrix>,
}

impl EnhancedSigmas {
    pub fn get(&self, n: Node) -> &SymMatrix {
        self.sig_tilde.get(n)
    }
}

/// `Θ` attached to node `x` in the enhancement formulas: `Θ_x` on internal
/// nodes and `Σ_X` on leaves.
pub(crate) fn anchor<'a>(inst: &'a ProblemInstance, th: &'a ThetaAssignment, x: Node) -> &'a SymMatrix {
    if x.k == inst.levels {
        &inst.sigma_x
    } else {
        th.get(x)
    }
}

/// `Σ̃_x = ((A_x + Σ_x)^{-1} + M_x)^{-1} - A_x` with `A_x` from [`anchor`].
/// A zero multiplier copies `Σ_x` so that inactive nodes are reproduced exactly.
pub fn enhance(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    ms: &MultiplierSet,
    tol: &Tolerance,
) -> Result<EnhancedSigmas, Error> {
    crate::objective::check_theta_shape(inst, th)?;
    if ms.levels() != inst.levels {
        return Err(Error::DimensionMismatch { expected: inst.levels, found: ms.levels() });
    }
    if let Some(node) = inst.first_boundary_node(tol) {
        return Err(Error::NotStrictlyInterior { node });
    }
    let ss = sigma_slacks(inst, tol)?;
    let mut out = Vec::with_capacity(ss.len());
    for (x, sx) in ss.iter() {
        let mx = ms.get(x);
        if mx.is_zero() {
            out.push(sx.clone());
            continue;
        }
        let a = anchor(inst, th, x);
        let err = Error::SingularEnhancement { node: x };
        let g = try_inverse(&(a + sx)).ok_or(err.clone())?;
        let inner = try_inverse(&(&g + mx)).ok_or(err)?;
        out.push(&inner - a);
    }
    Ok(EnhancedSigmas { sig_tilde: NodeMap::from_vec(inst.levels, out)? })
}

/// The ten identities checked by [`verify_enhancement`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum Identity {
    /// `(Θ_n + Σ̃_odd)^{-1} = (Θ_n + Σ_odd)^{-1} + M_odd`.
    OddChildInverse,
    /// `(Θ_n + Σ̃_even)^{-1} = (Θ_n + Σ_even)^{-1} + M_even`.
    EvenChildInverse,
    /// `(Θ_n + Σ̃_odd)^{-1} + (Θ_n + Σ̃_even)^{-1} = (Θ_n + Σ̃_n)^{-1}`.
    InverseSum,
    /// `Σ̃_child ≻ Σ̃_n`, reported as `max(0, -λ_min(Σ̃_child - Σ̃_n))`.
    ChildOrder,
    /// `Σ̃_{1,1} ≻ 0`, reported as `max(0, -λ_min)`.
    RootPositive,
    /// `Σ̃_{1,1}^{-1}(Θ_{1,1} + Σ̃_{1,1}) = Σ_{1,1}^{-1}(Θ_{1,1} + Σ_{1,1})`.
    RootRatio,
    /// `(Θ_n + Σ̃_c)^{-1}(Θ_c + Σ̃_c) = (Θ_n + Σ_c)^{-1}(Θ_c + Σ_c)`, odd internal `c`.
    OddEdgeRatio,
    /// Same as [`Identity::OddEdgeRatio`] for even internal `c`.
    EvenEdgeRatio,
    /// `(Θ_n + Σ̃_c)^{-1}(Σ_X + Σ̃_c) = (Θ_n + Σ_c)^{-1}(Σ_X + Σ_c)`, odd leaf `c`.
    OddTopRatio,
    /// Same as [`Identity::OddTopRatio`] for even leaf `c`.
    EvenTopRatio,
}

impl Identity {
    pub const ALL: [Identity; 10] = [
        Identity::OddChildInverse,
        Identity::EvenChildInverse,
        Identity::InverseSum,
        Identity::ChildOrder,
        Identity::RootPositive,
        Identity::RootRatio,
        Identity::OddEdgeRatio,
        Identity::EvenEdgeRatio,
        Identity::OddTopRatio,
        Identity::EvenTopRatio,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Identity::OddChildInverse => "odd_child_inverse",
            Identity::EvenChildInverse => "even_child_inverse",
            Identity::InverseSum => "inverse_sum",
            Identity::ChildOrder => "child_order",
            Identity::RootPositive => "root_positive",
            Identity::RootRatio => "root_ratio",
            Identity::OddEdgeRatio => "odd_edge_ratio",
            Identity::EvenEdgeRatio => "even_edge_ratio",
            Identity::OddTopRatio => "odd_top_ratio",
            Identity::EvenTopRatio => "even_top_ratio",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IdentityResidual {
    pub identity: Identity,
    /// Largest max-norm residual over the nodes where the identity applies.
    pub value: f64,
    /// Node attaining `value`; `None` when the identity has no instance
    /// (edge ratios with `L = 2`).
    pub node: Option<Node>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EnhancementResiduals {
    /// One entry per [`Identity`], in [`Identity::ALL`] order.
    pub entries: Vec<IdentityResidual>,
}

impl EnhancementResiduals {
    pub fn max(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.value))
    }

    pub fn get(&self, id: Identity) -> &IdentityResidual {
        self.entries.iter().find(|e| e.identity == id).expect("all identities present")
    }
}

struct Acc {
    value: f64,
    node: Option<Node>,
}

impl Acc {
    fn push(&mut self, node: Node, v: f64) {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if self.node.is_none() || v > self.value {
            self.value = v;
            self.node = Some(node);
        }
    }
}

fn inv_or_nan(a: &SymMatrix) -> Mat {
    match try_inverse(a) {
        Some(i) => i.into_mat(),
        None => Mat::from_element(a.dim(), a.dim(), f64::NAN),
    }
}

fn ratio_residual(lhs_inv: &Mat, lhs: &Mat, rhs_inv: &Mat, rhs: &Mat) -> f64 {
    max_abs(&(lhs_inv * lhs - rhs_inv * rhs))
}

/// Residuals of the ten enhancement identities. The original side is
/// evaluated in information form, `(A + Σ_x)^{-1} = ∇t_x(A)` and
/// `Σ_{1,1}^{-1} = D_{1,1}^{-1} - Σ_X^{-1}`, so boundary nodes are handled.
/// Failed inversions show up as infinite residuals.
pub fn verify_enhancement(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    ms: &MultiplierSet,
    es: &EnhancedSigmas,
) -> EnhancementResiduals {
    let mut acc: Vec<Acc> = Identity::ALL.iter().map(|_| Acc { value: 0.0, node: None }).collect();
    let idx = |id: Identity| Identity::ALL.iter().position(|&x| x == id).expect("identity");
    let obj = InfoObjective::new(inst).ok();
    let grad = |x: Node, a: &SymMatrix| -> Mat {
        match &obj {
            Some(o) => o.term(x, a).1.into_mat(),
            None => Mat::from_element(inst.m, inst.m, f64::NAN),
        }
    };
    let id_m = Mat::identity(inst.m, inst.m);
    for n in inst.internal_nodes() {
        let t = th.get(n);
        let tilde_n = es.get(n);
        let lhs_n = inv_or_nan(&(t + tilde_n));
        let mut sum = Mat::zeros(inst.m, inst.m);
        for c in [n.odd_child(), n.even_child()] {
            let tilde_c = es.get(c);
            let lhs_c = inv_or_nan(&(t + tilde_c));
            let rhs_c = grad(c, t) + ms.get(c).as_mat();
            let id = if c.is_odd() { Identity::OddChildInverse } else { Identity::EvenChildInverse };
            acc[idx(id)].push(c, max_abs(&(&lhs_c - rhs_c)));
            sum += &lhs_c;

            let gap = tilde_c - tilde_n;
            acc[idx(Identity::ChildOrder)].push(c, f64::max(0.0, -gap.min_eigenvalue()));

            // (A_n + S)^{-1}(A_c + S) = I + (A_n + S)^{-1}(A_c - A_n) on both sides.
            let a_c = anchor(inst, th, c);
            let step = (a_c - t).into_mat();
            let r = ratio_residual(&lhs_c, &step, &grad(c, t), &step);
            let id = match (c.k == inst.levels, c.is_odd()) {
                (false, true) => Identity::OddEdgeRatio,
                (false, false) => Identity::EvenEdgeRatio,
                (true, true) => Identity::OddTopRatio,
                (true, false) => Identity::EvenTopRatio,
            };
            acc[idx(id)].push(c, r);
        }
        acc[idx(Identity::InverseSum)].push(n, max_abs(&(sum - lhs_n)));
    }

    let root = Node::ROOT;
    let t11 = th.get(root);
    let tilde_11 = es.get(root);
    acc[idx(Identity::RootPositive)].push(root, f64::max(0.0, -tilde_11.min_eigenvalue()));
    let p11 = match (try_inverse(inst.d(root)), try_inverse(&inst.sigma_x)) {
        (Some(a), Some(b)) => (&a - &b).into_mat(),
        _ => Mat::from_element(inst.m, inst.m, f64::NAN),
    };
    let lhs = &id_m + inv_or_nan(tilde_11) * t11.as_mat();
    let rhs = &id_m + p11 * t11.as_mat();
    acc[idx(Identity::RootRatio)].push(root, max_abs(&(lhs - rhs)));

    let entries = Identity::ALL
        .iter()
        .zip(acc)
        .map(|(&identity, a)| IdentityResidual { identity, value: a.value, node: a.node })
        .collect();
    EnhancementResiduals { entries }
}

/// Sum rate written with `Σ̃`:
/// `½ log |Σ_X + Σ̃_{1,1}|/|Σ̃_{1,1}| + Σ_n ½ log |Θ_n + Σ̃_n||Σ_X + Σ̃_o||Σ_X + Σ̃_e| /
/// (|Σ_X + Σ̃_n||Θ_n + Σ̃_o||Θ_n + Σ̃_e|)`.
pub fn sum_rate_enhanced(inst: &ProblemInstance, th: &ThetaAssignment, es: &EnhancedSigmas) -> Result<f64, Error> {
    crate::objective::check_theta_shape(inst, th)?;
    let sigma = &inst.sigma_x;
    let ld = |a: &SymMatrix, node: Node| try_logdet(a).ok_or(Error::SingularTerm { node });
    let root = Node::ROOT;
    let mut total = 0.5 * (ld(&(sigma + es.get(root)), root)? - ld(es.get(root), root)?);
    for n in inst.internal_nodes() {
        let t = th.get(n);
        let (o, e) = (n.odd_child(), n.even_child());
        let num = ld(&(t + es.get(n)), n)? + ld(&(sigma + es.get(o)), o)? + ld(&(sigma + es.get(e)), e)?;
        let den = ld(&(sigma + es.get(n)), n)? + ld(&(t + es.get(o)), o)? + ld(&(t + es.get(e)), e)?;
        total += 0.5 * (num - den);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(sigma: f64, d: &[f64]) -> ProblemInstance {
        let levels = (d.len() + 1).trailing_zeros() as usize;
        let map = NodeMap::from_vec(levels, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
        ProblemInstance::new(SymMatrix::scalar(sigma), levels, map).unwrap()
    }

    fn scalars(levels: usize, v: &[f64]) -> NodeMap<SymMatrix> {
        NodeMap::from_vec(levels, v.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap()
    }

    // σ² = 1, D = (0.25, 0.9, 0.9): θ* = 1 with M_{2,1} = 3/4 - 2/10.
    fn top_active() -> (ProblemInstance, ThetaAssignment, MultiplierSet) {
        (scalar(1.0, &[0.25, 0.9, 0.9]), scalars(1, &[1.0]), scalars(2, &[0.0, 0.55, 0.0]))
    }

    #[test]
    fn zero_multipliers_reproduce_sigma() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[1.0 / 6.0, 0.5, 0.5]);
        let th = scalars(1, &[0.6]);
        let es = enhance(&inst, &th, &scalars(2, &[0.0; 3]), &tol).unwrap();
        assert_eq!(es.sig_tilde, sigma_slacks(&inst, &tol).unwrap());
    }

    #[test]
    fn scalar_top_active_enhancement() {
        let tol = Tolerance::default();
        let (inst, th, ms) = top_active();
        let es = enhance(&inst, &th, &ms, &tol).unwrap();
        assert!((es.get(Node::ROOT).get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((es.get(Node::new(2, 1)).get(0, 0) - (1.0 / 0.65 - 1.0)).abs() < 1e-12);
        // Zero multiplier: copied bit for bit.
        assert_eq!(es.get(Node::new(2, 2)), &sigma_from(&inst, Node::new(2, 2)));
        let r = verify_enhancement(&inst, &th, &ms, &es);
        assert_eq!(r.entries.len(), 10);
        assert!(r.max() < 1e-10, "{r:?}");
        let v = sum_rate_enhanced(&inst, &th, &es).unwrap();
        assert!((v - 0.5 * 4f64.ln()).abs() < 1e-12);
    }

    fn sigma_from(inst: &ProblemInstance, n: Node) -> SymMatrix {
        crate::objective::sigma_from_distortion(inst.d(n), &inst.sigma_x, n, &Tolerance::default()).unwrap()
    }

    #[test]
    fn stale_multipliers_are_detected() {
        let tol = Tolerance::default();
        let (inst, _, ms) = top_active();
        let th = scalars(1, &[1.0 - 1e-3]);
        let es = enhance(&inst, &th, &ms, &tol).unwrap();
        let r = verify_enhancement(&inst, &th, &ms, &es);
        let sum = r.get(Identity::InverseSum).value;
        assert!(sum > 1e-4 && sum < 1e-2, "{sum}");
    }

    #[test]
    fn boundary_instance_rejected() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[0.25, 1.0, 1.0]);
        let err = enhance(&inst, &scalars(1, &[1.0]), &scalars(2, &[0.0, 0.75, 0.0]), &tol).unwrap_err();
        assert_eq!(err.kind(), "NotStrictlyInterior");
    }

    #[test]
    fn zero_multipliers_match_objective_anywhere() {
        let tol = Tolerance::default();
        let inst = scalar(2.0, &[1.9, 1.9, 1.9]);
        let th = crate::objective::default_chain(&inst, 1e-3);
        let es = enhance(&inst, &th, &scalars(2, &[0.0; 3]), &tol).unwrap();
        let v = sum_rate_enhanced(&inst, &th, &es).unwrap();
        let direct = crate::objective::objective_sigma(&inst, &th, &tol).unwrap();
        assert!((v - direct).abs() < 1e-12);
    }
}
