//! Gaussian test channel from `(Θ, Σ̃)`.
//!
//! `V_{1,1} ~ N(0, Σ̃_{1,1})` and each sibling pair `(V_odd, V_even)` under
//! internal `n` has covariance `Λ_n`; pairs are independent of each other and
//! of `X`. `Q_x` is the sum of the `V`s on the root-to-`x` path and
//! `U_j = X + Q_{L,j}`.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{is_loewner_leq, max_abs, try_inverse, try_logdet, Mat, SymMatrix, Tolerance};
use crate::objective::ThetaAssignment;
use crate::scheme::enhance::EnhancedSigmas;
use crate::tree::{leaf_lca, Node, NodeMap, ProblemInstance};

/// Per internal node: `Λ`, `Γ`, the `H` pair and the residuals of the
/// structural identities.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct NodeStructure {
    pub lambda: SymMatrix,
    pub gamma: SymMatrix,
    pub h_odd: Block,
    pub h_even: Block,
    pub lambda_min_eig: f64,
    /// `‖H_odd + H_even - I‖_max`.
    pub h_sum_residual: f64,
    /// `‖(H_odd, H_even) Λ (H_odd, H_even)^T‖_max`.
    pub h_lambda_residual: f64,
    /// `‖Σ̃_n^{-1} - (I, I) Γ^{-1} (I, I)^T‖_max`.
    pub gamma_inverse_residual: f64,
}

/// Dense `m × m` block stored row-major; `H` is not symmetric in general.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Block {
    pub rows: Vec<Vec<f64>>,
}

impl Block {
    fn from_mat(a: &Mat) -> Self {
        Block { rows: (0..a.nrows()).map(|r| a.row(r).iter().copied().collect()).collect() }
    }

    pub fn to_mat(&self) -> Mat {
        let n = self.rows.len();
        Mat::from_fn(n, n, |r, c| self.rows[r][c])
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SchemeConstruction {
    pub m: usize,
    pub levels: usize,
    pub nodes: NodeMap<NodeStructure>,
    /// Joint covariance of `(Q_{L,1}, …, Q_{L,M})`; empty until [`build_q_tree`].
    pub q_joint: Option<SymMatrix>,
    /// `cov(Q_x)` accumulated from the `V` tree, every node.
    pub node_q_cov: Option<NodeMap<SymMatrix>>,
}

impl SchemeConstruction {
    pub fn lambda_min(&self) -> f64 {
        self.nodes.values().iter().fold(f64::INFINITY, |a, s| a.min(s.lambda_min_eig))
    }

    /// Worst negative eigenvalue of any `Λ` relative to `1 + ‖Λ‖_max`.
    pub fn lambda_negativity(&self) -> f64 {
        self.nodes.values().iter().fold(0.0, |a, s| a.max(-s.lambda_min_eig / (1.0 + s.lambda.max_abs())))
    }

    pub fn max_h_sum_residual(&self) -> f64 {
        self.nodes.values().iter().fold(0.0, |a, s| a.max(s.h_sum_residual))
    }

    pub fn max_h_lambda_residual(&self) -> f64 {
        self.nodes.values().iter().fold(0.0, |a, s| a.max(s.h_lambda_residual))
    }

    pub fn max_gamma_inverse_residual(&self) -> f64 {
        self.nodes.values().iter().fold(0.0, |a, s| a.max(s.gamma_inverse_residual))
    }

    /// `cov(V_u, V_v)`: nonzero only for `u = v` or siblings.
    pub fn v_cov(&self, es: &EnhancedSigmas, u: Node, v: Node) -> Option<Mat> {
        let m = self.m;
        if u.is_root() || v.is_root() {
            return (u == v).then(|| es.get(Node::ROOT).as_mat().clone());
        }
        let pu = u.parent().expect("non-root");
        if Some(pu) != v.parent() {
            return None;
        }
        let lam = self.nodes.get(pu).lambda.as_mat();
        let r = if u.is_odd() { 0 } else { m };
        let c = if v.is_odd() { 0 } else { m };
        Some(lam.view((r, c), (m, m)).into_owned())
    }

    /// `cov(Q_a, Q_b)` by summing `cov(V_u, V_v)` over both root paths.
    pub fn q_cov(&self, es: &EnhancedSigmas, a: Node, b: Node) -> Mat {
        let mut out = Mat::zeros(self.m, self.m);
        let (pa, pb) = (a.path(), b.path());
        for &u in &pa {
            for &v in &pb {
                if let Some(c) = self.v_cov(es, u, v) {
                    out += c;
                }
            }
        }
        out
    }
}

fn block2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let m = a.nrows();
    let mut out = Mat::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(a);
    out.view_mut((0, m), (m, m)).copy_from(b);
    out.view_mut((m, 0), (m, m)).copy_from(c);
    out.view_mut((m, m), (m, m)).copy_from(d);
    out
}

/// `Λ`, `Γ` and `H = (Σ̃_n, Σ̃_n) Γ^{-1}` for every internal node, with
/// residuals but no PSD enforcement.
pub fn build_lambda_gamma_lenient(th: &ThetaAssignment, es: &EnhancedSigmas) -> Result<SchemeConstruction, Error> {
    let levels = es.sig_tilde.levels();
    if th.levels() + 1 != levels {
        return Err(Error::DimensionMismatch { expected: levels - 1, found: th.levels() });
    }
    let m = es.get(Node::ROOT).dim();
    let id = Mat::identity(m, m);
    let mut out = Vec::with_capacity(th.len());
    for (n, t) in th.iter() {
        let sp = es.get(n).as_mat();
        let so = es.get(n.odd_child()).as_mat();
        let se = es.get(n.even_child()).as_mat();
        let off = -(t.as_mat() + sp);
        let lambda = SymMatrix::from_mat(block2(&(so - sp), &off, &off, &(se - sp)));
        let neg_t = -t.as_mat();
        let gamma = SymMatrix::from_mat(block2(so, &neg_t, &neg_t, se));
        let gamma_inv = gamma.as_mat().clone().cholesky().ok_or(Error::GammaSingular { node: n })?.inverse();
        let mut row = Mat::zeros(m, 2 * m);
        row.view_mut((0, 0), (m, m)).copy_from(sp);
        row.view_mut((0, m), (m, m)).copy_from(sp);
        let h = &row * &gamma_inv;
        let h_odd = h.view((0, 0), (m, m)).into_owned();
        let h_even = h.view((0, m), (m, m)).into_owned();
        let h_sum_residual = max_abs(&(&h_odd + &h_even - &id));
        let h_lambda_residual = max_abs(&(&h * lambda.as_mat() * h.transpose()));
        let mut ii = Mat::zeros(m, 2 * m);
        ii.view_mut((0, 0), (m, m)).copy_from(&id);
        ii.view_mut((0, m), (m, m)).copy_from(&id);
        let folded = &ii * &gamma_inv * ii.transpose();
        let gamma_inverse_residual = match try_inverse(es.get(n)) {
            Some(inv) => max_abs(&(inv.as_mat() - folded)),
            None => f64::INFINITY,
        };
        out.push(NodeStructure {
            lambda_min_eig: lambda.min_eigenvalue(),
            lambda,
            gamma,
            h_odd: Block::from_mat(&h_odd),
            h_even: Block::from_mat(&h_even),
            h_sum_residual,
            h_lambda_residual,
            gamma_inverse_residual,
        });
    }
    Ok(SchemeConstruction { m, levels, nodes: NodeMap::from_vec(levels - 1, out)?, q_joint: None, node_q_cov: None })
}

/// As [`build_lambda_gamma_lenient`], failing with `LambdaNotPsd` when some
/// `Λ` is negative beyond the PSD slack.
pub fn build_lambda_gamma(th: &ThetaAssignment, es: &EnhancedSigmas, tol: &Tolerance) -> Result<SchemeConstruction, Error> {
    let sc = build_lambda_gamma_lenient(th, es)?;
    for (node, s) in sc.nodes.iter() {
        if s.lambda_min_eig < -tol.psd_slack(&s.lambda) {
            return Err(Error::LambdaNotPsd { node, min_eig: s.lambda_min_eig });
        }
    }
    Ok(sc)
}

/// Completes `sc` with `cov(Q_x)` for every node and the joint leaf covariance.
pub fn build_q_tree(es: &EnhancedSigmas, mut sc: SchemeConstruction) -> SchemeConstruction {
    let levels = sc.levels;
    let m = sc.m;
    let leaves = 1usize << (levels - 1);
    let node_q = NodeMap::from_fn(levels, |x| SymMatrix::from_mat(sc.q_cov(es, x, x)));
    let mut q = Mat::zeros(leaves * m, leaves * m);
    for a in 1..=leaves {
        for b in a..=leaves {
            let c = sc.q_cov(es, Node::new(levels, a), Node::new(levels, b));
            q.view_mut(((a - 1) * m, (b - 1) * m), (m, m)).copy_from(&c);
            q.view_mut(((b - 1) * m, (a - 1) * m), (m, m)).copy_from(&c.transpose());
        }
    }
    sc.node_q_cov = Some(node_q);
    sc.q_joint = Some(SymMatrix::from_mat(q));
    sc
}

/// Structural checks on the completed `Q` tree: `cov(Q_x) = Σ̃_x` and
/// `cov(Q_a, Q_b) = -Θ_{lca(a,b)}` for distinct leaves.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct QTreeResiduals {
    pub node_cov: f64,
    pub lca_blocks: f64,
}

pub fn q_tree_residuals(th: &ThetaAssignment, es: &EnhancedSigmas, sc: &SchemeConstruction) -> QTreeResiduals {
    let m = sc.m;
    let levels = sc.levels;
    let node_cov = match &sc.node_q_cov {
        Some(nq) => nq.iter().fold(0.0f64, |a, (x, c)| a.max((c - es.get(x)).max_abs())),
        None => f64::INFINITY,
    };
    let lca_blocks = match &sc.q_joint {
        Some(q) => {
            let leaves = 1usize << (levels - 1);
            let mut worst = 0.0f64;
            for a in 1..=leaves {
                for b in 1..=leaves {
                    let blk = q.as_mat().view(((a - 1) * m, (b - 1) * m), (m, m)).into_owned();
                    let want = if a == b {
                        es.get(Node::new(levels, a)).as_mat().clone()
                    } else {
                        -th.get(leaf_lca(levels, a, b)).as_mat()
                    };
                    worst = worst.max(max_abs(&(blk - want)));
                }
            }
            worst
        }
        None => f64::INFINITY,
    };
    QTreeResiduals { node_cov, lca_blocks }
}

/// Sum rate of the constructed scheme, computed two ways.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AchievableRate {
    /// `Σ_j h(U_j) - h(U_1, …, U_M | X)` from the joint covariance.
    pub direct: f64,
    /// Per-node mutual-information telescoping in `(Θ, Σ̃)`.
    pub telescoped: f64,
}

impl AchievableRate {
    pub fn gap(&self) -> f64 {
        libm::fabs(self.direct - self.telescoped)
    }
}

fn gaussian_entropy(ld: f64, dim: usize) -> f64 {
    0.5 * (dim as f64 * libm::log(2.0 * core::f64::consts::PI * core::f64::consts::E) + ld)
}

pub fn achievable_sum_rate(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    es: &EnhancedSigmas,
    sc: &SchemeConstruction,
) -> Result<AchievableRate, Error> {
    let q = sc.q_joint.as_ref().ok_or(Error::JointCovSingular)?;
    let m = inst.m;
    let sigma = &inst.sigma_x;
    let mut direct = 0.0;
    for leaf in inst.leaves() {
        let ld = try_logdet(&(sigma + es.get(leaf))).ok_or(Error::SingularTerm { node: leaf })?;
        direct += gaussian_entropy(ld, m);
    }
    let ld_q = try_logdet(q).ok_or(Error::JointCovSingular)?;
    direct -= gaussian_entropy(ld_q, q.dim());

    let ld = |a: &SymMatrix, node: Node| try_logdet(a).ok_or(Error::SingularTerm { node });
    let mi = |a: &SymMatrix, x: Node| -> Result<f64, Error> {
        Ok(0.5 * (ld(&(sigma + es.get(x)), x)? - ld(&(a + es.get(x)), x)?))
    };
    let root = Node::ROOT;
    let mut telescoped = 0.5 * (ld(&(sigma + es.get(root)), root)? - ld(es.get(root), root)?);
    for n in inst.internal_nodes() {
        let t = th.get(n);
        telescoped += mi(t, n.odd_child())? + mi(t, n.even_child())? - mi(t, n)?;
    }
    Ok(AchievableRate { direct, telescoped })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DistortionRow {
    pub node: Node,
    /// `(Σ_X^{-1} + Σ̃^{-1})^{-1}`.
    pub achieved: SymMatrix,
    /// `Σ_X - C Σ_U^{-1} C^T` from the joint law of `(X, U_S)`.
    pub achieved_mmse: SymMatrix,
    pub required: SymMatrix,
    /// `‖achieved - achieved_mmse‖_max`.
    pub path_gap: f64,
    pub satisfied: bool,
}

/// `Σ_U` for descriptions `lo..=hi` (1-based) and the cross block `C = (Σ_X, …, Σ_X)`.
pub(crate) fn subset_law(inst: &ProblemInstance, q: &SymMatrix, lo: usize, hi: usize) -> (Mat, Mat) {
    let m = inst.m;
    let w = hi + 1 - lo;
    let s = (lo - 1) * m;
    let mut su = q.as_mat().view((s, s), (w * m, w * m)).into_owned();
    let mut c = Mat::zeros(m, w * m);
    for a in 0..w {
        c.view_mut((0, a * m), (m, m)).copy_from(inst.sigma_x.as_mat());
        for b in 0..w {
            let mut blk = su.view_mut((a * m, b * m), (m, m));
            blk += inst.sigma_x.as_mat();
        }
    }
    (su, c)
}

/// Achieved reconstruction covariance per node, by closed form and by direct
/// MMSE; `satisfied` iff the closed form is `⪯ D` within the PSD slack.
pub fn distortion_check(
    inst: &ProblemInstance,
    es: &EnhancedSigmas,
    sc: &SchemeConstruction,
    tol: &Tolerance,
) -> Result<Vec<DistortionRow>, Error> {
    let q = sc.q_joint.as_ref().ok_or(Error::JointCovSingular)?;
    let sigma_inv = try_inverse(&inst.sigma_x).ok_or(Error::NotPositiveDefinite { min_eig: inst.sigma_x.min_eigenvalue() })?;
    let mut rows = Vec::with_capacity(inst.distortions.len());
    for (x, d) in inst.distortions.iter() {
        let err = Error::SingularEnhancement { node: x };
        let tinv = try_inverse(es.get(x)).ok_or(err.clone())?;
        let achieved = try_inverse(&(&sigma_inv + &tinv)).ok_or(err)?;
        let (lo, hi) = x.subset(inst.levels);
        let (su, c) = subset_law(inst, q, lo, hi);
        let chol = su.cholesky().ok_or(Error::JointCovSingular)?;
        let mmse = SymMatrix::from_mat(inst.sigma_x.as_mat() - &c * chol.solve(&c.transpose()));
        let path_gap = (&achieved - &mmse).max_abs();
        let satisfied = is_loewner_leq(&achieved, d, tol);
        rows.push(DistortionRow { node: x, achieved, achieved_mmse: mmse, required: d.clone(), path_gap, satisfied });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::enhance::enhance;

    fn scalars(levels: usize, v: &[f64]) -> NodeMap<SymMatrix> {
        NodeMap::from_vec(levels, v.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap()
    }

    fn scalar(sigma: f64, d: &[f64]) -> ProblemInstance {
        let levels = (d.len() + 1).trailing_zeros() as usize;
        ProblemInstance::new(SymMatrix::scalar(sigma), levels, scalars(levels, d)).unwrap()
    }

    fn built(inst: &ProblemInstance, th: &ThetaAssignment, ms: &NodeMap<SymMatrix>) -> (EnhancedSigmas, SchemeConstruction) {
        let tol = Tolerance::default();
        let es = enhance(inst, th, ms, &tol).unwrap();
        let sc = build_lambda_gamma(th, &es, &tol).unwrap();
        (es.clone(), build_q_tree(&es, sc))
    }

    #[test]
    fn symmetric_instance_splits_evenly() {
        // Σ_S = (0.2, 1, 1): interior optimum θ* = 0.6, no active constraint.
        let inst = scalar(1.0, &[1.0 / 6.0, 0.5, 0.5]);
        let th = scalars(1, &[0.6]);
        let (_, sc) = built(&inst, &th, &scalars(2, &[0.0; 3]));
        let s = sc.nodes.get(Node::ROOT);
        assert!((s.h_odd.to_mat()[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((s.h_even.to_mat()[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(s.lambda_min_eig.abs() < 1e-12);
    }

    #[test]
    fn scalar_top_active_structure() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[0.25, 0.9, 0.9]);
        let th = scalars(1, &[1.0]);
        let (es, sc) = built(&inst, &th, &scalars(2, &[0.0, 0.55, 0.0]));
        let s = sc.nodes.get(Node::ROOT);
        let lam = s.lambda.as_mat();
        let s11 = 1.0 / 3.0;
        let s21 = 1.0 / 0.65 - 1.0;
        assert!((lam[(0, 0)] - (s21 - s11)).abs() < 1e-12);
        assert!((lam[(0, 1)] + 1.0 + s11).abs() < 1e-12);
        assert!((lam[(1, 1)] - (9.0 - s11)).abs() < 1e-10);
        // Determinant condition for a 2×2 PSD matrix, tight at the optimum.
        let (a, b) = ((s21 - s11) * (9.0 - s11), (1.0 + s11) * (1.0 + s11));
        assert!(a >= b - 1e-10 && (a - b).abs() < 1e-10);
        let det_gamma = s21 * 9.0 - 1.0;
        assert!((s.h_odd.to_mat()[(0, 0)] - s11 * 10.0 / det_gamma).abs() < 1e-12);
        assert!((s.h_even.to_mat()[(0, 0)] - s11 * (1.0 + s21) / det_gamma).abs() < 1e-12);
        assert!(s.h_sum_residual < 1e-12 && s.h_lambda_residual < 1e-12 && s.gamma_inverse_residual < 1e-12);

        // L = 2: the joint leaf covariance is Γ itself.
        assert_eq!(sc.q_joint.as_ref().unwrap(), &s.gamma);
        let rate = achievable_sum_rate(&inst, &th, &es, &sc).unwrap();
        assert!((rate.direct - 0.5 * 4f64.ln()).abs() < 1e-12);
        assert!(rate.gap() < 1e-12);

        let rows = distortion_check(&inst, &es, &sc, &tol).unwrap();
        assert!(rows.iter().all(|r| r.satisfied && r.path_gap < 1e-12));
        assert!((rows[0].achieved.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((rows[1].achieved.get(0, 0) - 0.35).abs() < 1e-12);
        assert!((rows[2].achieved.get(0, 0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn three_level_blocks_follow_lca() {
        // Zero multipliers: Σ̃ = Σ_S, and Λ is PSD wherever Θ = Θ*;
        // the block structure of q_joint holds for any Θ.
        let inst = scalar(1.0, &[0.1, 0.2, 0.25, 0.4, 0.45, 0.5, 0.55]);
        let th = scalars(2, &[0.2, 0.4, 0.5]);
        let tol = Tolerance::default();
        let es = enhance(&inst, &th, &scalars(3, &[0.0; 7]), &tol).unwrap();
        let sc = build_q_tree(&es, build_lambda_gamma_lenient(&th, &es).unwrap());
        let r = q_tree_residuals(&th, &es, &sc);
        assert!(r.node_cov < 1e-12 && r.lca_blocks < 1e-12, "{r:?}");
        let q = sc.q_joint.unwrap();
        assert!((q.get(0, 2) + 0.2).abs() < 1e-12);
        assert!((q.get(0, 1) + 0.4).abs() < 1e-12);
        assert!((q.get(2, 3) + 0.5).abs() < 1e-12);
        let cov21 = sc.node_q_cov.unwrap().get(Node::new(2, 1)).clone();
        assert!((&cov21 - es.get(Node::new(2, 1))).max_abs() < 1e-12);
    }

    #[test]
    fn strict_build_rejects_negative_lambda() {
        // Λ = [[0.8, -θ-0.2], [-θ-0.2, 0.8]] is indefinite for θ > 0.6.
        let inst = scalar(1.0, &[1.0 / 6.0, 0.5, 0.5]);
        let th = scalars(1, &[0.9]);
        let tol = Tolerance::default();
        let es = enhance(&inst, &th, &scalars(2, &[0.0; 3]), &tol).unwrap();
        assert_eq!(build_lambda_gamma(&th, &es, &tol).unwrap_err().kind(), "LambdaNotPsd");
        assert!(build_lambda_gamma_lenient(&th, &es).unwrap().lambda_min() < 0.0);
    }
}
