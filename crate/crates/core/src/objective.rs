//! Sum-rate objective over the auxiliary covariances `Θ_{k,i}`.
//!
//! Three evaluators agree on their common domain:
//! - [`objective_theta`] works directly with `D`, `Σ_X`, `Θ` and is valid on
//!   boundary instances (`D = Σ_X` allowed);
//! - [`objective_sigma`] uses `Σ_S = (D^{-1} - Σ_X^{-1})^{-1}` and needs a
//!   strictly interior instance;
//! - [`InfoObjective`] uses the information matrix `P = D^{-1} - Σ_X^{-1}`.
//!   It is valid everywhere, symmetric throughout, and drives the optimizer.
//!
//! `Θ` lives on the internal nodes (levels `1..L`), subject to
//! `0 ⪯ Θ_{1,1}`, `Θ_parent ⪯ Θ_child` and `Θ_{L-1,i} ⪯ Σ_X`.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{
    chol_logdet, is_loewner_leq, is_loewner_lt, is_psd, log_abs_det, logdet, try_inverse, Mat, SymMatrix, Tolerance,
};
use crate::tree::{Node, NodeMap, ProblemInstance};

/// One `Θ` per internal node.
pub type ThetaAssignment = NodeMap<SymMatrix>;

/// Noise covariances `Σ_N` on the internal nodes.
pub type NoiseTree = NodeMap<SymMatrix>;

/// `Σ_S` for every node of a strictly interior instance.
pub type SigmaSlack = NodeMap<SymMatrix>;

/// `Θ_{k,i} = (k/L)(1-δ) Σ_X`: strictly feasible for `0 < δ < 1`.
pub fn default_chain(inst: &ProblemInstance, delta: f64) -> ThetaAssignment {
    let l = inst.levels as f64;
    NodeMap::from_fn(inst.levels - 1, |n| inst.sigma_x.scale(n.k as f64 / l * (1.0 - delta)))
}

/// Lower end of the chain constraint for `n`: zero at the root, else the parent `Θ`.
pub fn chain_floor(th: &ThetaAssignment, n: Node) -> Option<&SymMatrix> {
    n.parent().map(|p| th.get(p))
}

/// Slack matrix guarded by the multiplier at `n` (all nodes of the full
/// tree). Root: `Θ_{1,1}`; internal: `Θ_n - Θ_parent`; odd leaf:
/// `Σ_X - Θ_parent`. Even leaves carry no slack.
pub fn slack(inst: &ProblemInstance, th: &ThetaAssignment, n: Node) -> Option<SymMatrix> {
    if n.k == inst.levels {
        if n.is_odd() {
            Some(&inst.sigma_x - th.get(n.parent()?))
        } else {
            None
        }
    } else {
        match n.parent() {
            None => Some(th.get(n).clone()),
            Some(p) => Some(th.get(n) - th.get(p)),
        }
    }
}

pub fn check_theta_shape(inst: &ProblemInstance, th: &ThetaAssignment) -> Result<(), Error> {
    if th.levels() != inst.levels - 1 {
        return Err(Error::DimensionMismatch { expected: inst.levels - 1, found: th.levels() });
    }
    for (_, t) in th.iter() {
        if t.dim() != inst.m {
            return Err(Error::DimensionMismatch { expected: inst.m, found: t.dim() });
        }
    }
    Ok(())
}

/// Chain feasibility within the PSD slack. Only the odd-leaf slack is
/// checked at the top: the even one is the same matrix.
pub fn check_feasible(inst: &ProblemInstance, th: &ThetaAssignment, tol: &Tolerance) -> Result<(), Error> {
    check_theta_shape(inst, th)?;
    for n in inst.internal_nodes() {
        let t = th.get(n);
        let ok = match n.parent() {
            None => is_psd(t, tol),
            Some(p) => is_loewner_leq(th.get(p), t, tol),
        };
        if !ok {
            return Err(Error::InfeasibleTheta { node: n });
        }
        if n.k == inst.levels - 1 && !is_loewner_leq(t, &inst.sigma_x, tol) {
            return Err(Error::InfeasibleTheta { node: n.odd_child() });
        }
    }
    Ok(())
}

/// `½ log |Σ_X| |A_n| / (|A_odd| |A_even|)` summed over internal nodes plus
/// the root term, with `A_S(Θ) = D_S Σ_X^{-1} (Σ_X - Θ) + Θ`.
pub fn objective_theta(inst: &ProblemInstance, th: &ThetaAssignment, tol: &Tolerance) -> Result<f64, Error> {
    check_feasible(inst, th, tol)?;
    let sigma = &inst.sigma_x;
    let sigma_inv = try_inverse(sigma).ok_or(Error::NotPositiveDefinite { min_eig: sigma.min_eigenvalue() })?;
    let ld_sigma = logdet(sigma, tol)?;
    let ld_root = logdet(inst.d(Node::ROOT), tol)?;
    let mut total = 0.5 * (ld_sigma - ld_root);
    for n in inst.internal_nodes() {
        let t = th.get(n).as_mat();
        let gap = sigma.as_mat() - t;
        let a = |x: Node| inst.d(x).as_mat() * sigma_inv.as_mat() * &gap + t;
        let mut term = ld_sigma;
        for (x, sign) in [(n, 1.0), (n.odd_child(), -1.0), (n.even_child(), -1.0)] {
            let (ld, s) = log_abs_det(&a(x));
            if s <= 0.0 {
                return Err(Error::SingularTerm { node: x });
            }
            term += sign * ld;
        }
        total += 0.5 * term;
    }
    Ok(total)
}

/// `Σ_S = (D^{-1} - Σ_X^{-1})^{-1}`; needs `D ≺ Σ_X`.
pub fn sigma_from_distortion(d: &SymMatrix, sigma_x: &SymMatrix, node: Node, tol: &Tolerance) -> Result<SymMatrix, Error> {
    if !is_loewner_lt(d, sigma_x, tol) {
        return Err(Error::NotStrictlyInterior { node });
    }
    let err = Error::NotStrictlyInterior { node };
    let d_inv = try_inverse(d).ok_or(err.clone())?;
    let s_inv = try_inverse(sigma_x).ok_or(err.clone())?;
    try_inverse(&(&d_inv - &s_inv)).ok_or(err)
}

pub fn sigma_slacks(inst: &ProblemInstance, tol: &Tolerance) -> Result<SigmaSlack, Error> {
    let mut out = Vec::with_capacity(inst.distortions.len());
    for (n, d) in inst.distortions.iter() {
        out.push(sigma_from_distortion(d, &inst.sigma_x, n, tol)?);
    }
    NodeMap::from_vec(inst.levels, out)
}

/// `½ log |Σ+Σ_{1,1}|/|Σ_{1,1}| + Σ_n ½ log |Θ+Σ_n||Σ+Σ_o||Σ+Σ_e| /
/// (|Σ+Σ_n||Θ+Σ_o||Θ+Σ_e|)`.
pub fn objective_sigma(inst: &ProblemInstance, th: &ThetaAssignment, tol: &Tolerance) -> Result<f64, Error> {
    check_feasible(inst, th, tol)?;
    let ss = sigma_slacks(inst, tol)?;
    objective_sigma_with(inst, &ss, th)
}

pub fn objective_sigma_with(inst: &ProblemInstance, ss: &SigmaSlack, th: &ThetaAssignment) -> Result<f64, Error> {
    let sigma = &inst.sigma_x;
    let ld = |a: SymMatrix, node: Node| crate::linalg::try_logdet(&a).ok_or(Error::SingularTerm { node });
    let s11 = ss.get(Node::ROOT);
    let mut total = 0.5 * (ld(sigma + s11, Node::ROOT)? - ld(s11.clone(), Node::ROOT)?);
    for n in inst.internal_nodes() {
        let t = th.get(n);
        let mut term = 0.0;
        for (x, sign) in [(n, 1.0), (n.odd_child(), -1.0), (n.even_child(), -1.0)] {
            let sx = ss.get(x);
            term += sign * (ld(t + sx, x)? - ld(sigma + sx, x)?);
        }
        total += 0.5 * term;
    }
    Ok(total)
}

/// Information-form evaluator. With `P_x = B_x B_x^T`,
/// `t_x(Θ) = log det(I + B_x^T Θ B_x)` and
/// `∇ t_x(Θ) = B_x (I + B_x^T Θ B_x)^{-1} B_x^T`, which equals
/// `(Θ + Σ_x)^{-1}` when `Σ_x` exists and vanishes when `D_x = Σ_X`.
#[derive(Clone, Debug)]
pub struct InfoObjective {
    levels: usize,
    m: usize,
    b: NodeMap<Mat>,
    t_sigma: NodeMap<f64>,
    root_const: f64,
}

impl InfoObjective {
    pub fn new(inst: &ProblemInstance) -> Result<Self, Error> {
        let sigma_inv = try_inverse(&inst.sigma_x)
            .ok_or(Error::NotPositiveDefinite { min_eig: inst.sigma_x.min_eigenvalue() })?;
        let mut bs = Vec::with_capacity(inst.distortions.len());
        for (_, d) in inst.distortions.iter() {
            let d_inv = try_inverse(d).ok_or(Error::NotPositiveDefinite { min_eig: d.min_eigenvalue() })?;
            let p = &d_inv - &sigma_inv;
            let eig = p.eigen();
            let cols: Vec<usize> = (0..inst.m).filter(|&j| eig.eigenvalues[j] > 0.0).collect();
            let mut b = Mat::zeros(inst.m, cols.len());
            for (c, &j) in cols.iter().enumerate() {
                let s = libm::sqrt(eig.eigenvalues[j]);
                for r in 0..inst.m {
                    b[(r, c)] = eig.eigenvectors[(r, j)] * s;
                }
            }
            bs.push(b);
        }
        let b = NodeMap::from_vec(inst.levels, bs)?;
        let mut obj = InfoObjective { levels: inst.levels, m: inst.m, b, t_sigma: NodeMap::from_fn(inst.levels, |_| 0.0), root_const: 0.0 };
        let sigma = inst.sigma_x.clone();
        let ts: Vec<f64> = crate::tree::nodes(inst.levels).map(|x| obj.term(x, &sigma).0).collect();
        obj.t_sigma = NodeMap::from_vec(inst.levels, ts)?;
        obj.root_const = 0.5 * *obj.t_sigma.get(Node::ROOT);
        Ok(obj)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// `(t_x(Θ), ∇ t_x(Θ))`.
    pub fn term(&self, x: Node, theta: &SymMatrix) -> (f64, SymMatrix) {
        let b = self.b.get(x);
        let r = b.ncols();
        if r == 0 {
            return (0.0, SymMatrix::zeros(self.m));
        }
        let inner = SymMatrix::from_mat(Mat::identity(r, r) + b.transpose() * theta.as_mat() * b);
        match inner.cholesky() {
            Some(c) => {
                let ld = chol_logdet(&c);
                let g = SymMatrix::from_mat(b * c.inverse() * b.transpose());
                (ld, g)
            }
            None => (f64::NAN, SymMatrix::from_mat(Mat::from_element(self.m, self.m, f64::NAN))),
        }
    }

    /// `½ (t_n - t_o - t_e)(Θ_n) - ½ (t_n - t_o - t_e)(Σ_X)` and the
    /// stationarity part `∇t_n - ∇t_o - ∇t_e` (no ½).
    pub fn node_term(&self, n: Node, theta: &SymMatrix) -> (f64, SymMatrix) {
        let (vn, gn) = self.term(n, theta);
        let (vo, go) = self.term(n.odd_child(), theta);
        let (ve, ge) = self.term(n.even_child(), theta);
        let base = self.t_sigma.get(n) - self.t_sigma.get(n.odd_child()) - self.t_sigma.get(n.even_child());
        (0.5 * (vn - vo - ve - base), &(&gn - &go) - &ge)
    }

    pub fn value(&self, th: &ThetaAssignment) -> f64 {
        let mut v = self.root_const;
        for (n, t) in th.iter() {
            v += self.node_term(n, t).0;
        }
        v
    }

    /// Value and the Lagrangian-scale gradient field `G_n` whose half is the
    /// true gradient.
    pub fn value_and_stationarity(&self, th: &ThetaAssignment) -> (f64, NodeMap<SymMatrix>) {
        let mut v = self.root_const;
        let g = th.map(|n, t| {
            let (tv, tg) = self.node_term(n, t);
            v += tv;
            tg
        });
        (v, g)
    }
}

/// `Θ = (Σ_X^{-1} + Σ_N^{-1})^{-1}` per node.
pub fn theta_from_noise(inst: &ProblemInstance, noise: &NoiseTree, tol: &Tolerance) -> Result<ThetaAssignment, Error> {
    check_noise(inst, noise, tol)?;
    let sigma_inv = crate::linalg::inverse(&inst.sigma_x, tol)?;
    let mut out = Vec::with_capacity(noise.len());
    for (n, sn) in noise.iter() {
        let ni = try_inverse(sn).ok_or(Error::InvalidNoiseTree { node: n })?;
        out.push(try_inverse(&(&sigma_inv + &ni)).ok_or(Error::InvalidNoiseTree { node: n })?);
    }
    NodeMap::from_vec(noise.levels(), out)
}

/// `Σ_N = (Θ^{-1} - Σ_X^{-1})^{-1}`; needs `0 ≺ Θ ≺ Σ_X`.
pub fn noise_from_theta(inst: &ProblemInstance, th: &ThetaAssignment, tol: &Tolerance) -> Result<NoiseTree, Error> {
    check_theta_shape(inst, th)?;
    let sigma_inv = crate::linalg::inverse(&inst.sigma_x, tol)?;
    let mut out = Vec::with_capacity(th.len());
    for (n, t) in th.iter() {
        if !(t.min_eigenvalue() > tol.psd_slack(t)) || !is_loewner_lt(t, &inst.sigma_x, tol) {
            return Err(Error::BoundaryTheta { node: n });
        }
        let ti = try_inverse(t).ok_or(Error::BoundaryTheta { node: n })?;
        out.push(try_inverse(&(&ti - &sigma_inv)).ok_or(Error::BoundaryTheta { node: n })?);
    }
    NodeMap::from_vec(th.levels(), out)
}

fn check_noise(inst: &ProblemInstance, noise: &NoiseTree, tol: &Tolerance) -> Result<(), Error> {
    if noise.levels() != inst.levels - 1 {
        return Err(Error::DimensionMismatch { expected: inst.levels - 1, found: noise.levels() });
    }
    for (n, sn) in noise.iter() {
        if sn.dim() != inst.m {
            return Err(Error::DimensionMismatch { expected: inst.m, found: sn.dim() });
        }
        if !(sn.min_eigenvalue() > tol.psd_slack(sn)) {
            return Err(Error::InvalidNoiseTree { node: n });
        }
        if let Some(p) = n.parent() {
            if !is_loewner_leq(noise.get(p), sn, tol) {
                return Err(Error::InvalidNoiseTree { node: n });
            }
        }
    }
    Ok(())
}

/// Lower-bound expression in noise coordinates: root term, edge terms between
/// internal nodes and the leaf terms under level `L-1`.
pub fn lower_bound_value(inst: &ProblemInstance, noise: &NoiseTree, tol: &Tolerance) -> Result<f64, Error> {
    check_noise(inst, noise, tol)?;
    let sigma = &inst.sigma_x;
    let ld = |a: &SymMatrix| logdet(a, tol);
    let n11 = noise.get(Node::ROOT);
    let d11 = inst.d(Node::ROOT);
    let mut total = 0.5 * (ld(sigma)? + ld(&(d11 + n11))? - ld(d11)? - ld(&(sigma + n11))?);
    for n in inst.internal_nodes() {
        let np = noise.get(n);
        for c in [n.odd_child(), n.even_child()] {
            let dc = inst.d(c);
            if c.k < inst.levels {
                let nc = noise.get(c);
                total += 0.5 * (ld(&(sigma + np))? + ld(&(dc + nc))? - ld(&(sigma + nc))? - ld(&(dc + np))?);
            } else {
                total += 0.5 * (ld(&(sigma + np))? - ld(&(dc + np))?);
            }
        }
    }
    Ok(total)
}
