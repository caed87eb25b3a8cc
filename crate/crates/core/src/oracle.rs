//! Brute-force references.
//!
//! For `m = 1` the objective is separable over nodes,
//! `f(θ) = c + Σ_n f_n(θ_n)`, under the chain `0 ≤ θ_parent ≤ θ_child ≤ σ²`.
//! [`scalar_grid_max`] maximizes it exactly over the grid
//! `{j r : j ≥ 0, j r < σ²} ∪ {σ²}` by dynamic programming on suffix maxima,
//! so the returned value is the true grid maximum and refining `r` to `r/2`
//! can only increase it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{logdet, SymMatrix, Tolerance};
use crate::objective::ThetaAssignment;
use crate::tree::{Node, NodeMap, ProblemInstance};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    resolution: f64,
}

impl GridSpec {
    pub fn new(resolution: f64) -> Result<Self, Error> {
        if resolution.is_finite() && resolution > 0.0 {
            Ok(GridSpec { resolution })
        } else {
            Err(Error::InvalidResolution)
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub theta: ThetaAssignment,
    pub value: f64,
    pub grid_points: usize,
}

/// Maximum of the scalar objective over the chain-constrained grid.
pub fn scalar_grid_max(inst: &ProblemInstance, grid: GridSpec) -> Result<GridResult, Error> {
    if inst.m != 1 {
        return Err(Error::UnsupportedDimension { m: inst.m });
    }
    let s2 = inst.sigma_x.get(0, 0);
    let r = grid.resolution;
    let steps = libm::ceil(s2 / r) as usize;
    if steps > 1 << 28 {
        return Err(Error::InvalidResolution);
    }
    let mut pts: Vec<f64> = (0..steps).map(|j| j as f64 * r).filter(|&x| x < s2).collect();
    pts.push(s2);
    let np = pts.len();

    let p = inst.distortions.map(|_, d| f64::max(1.0 / d.get(0, 0) - 1.0 / s2, 0.0));
    let t = |x: Node, th: f64| libm::log1p(*p.get(x) * th);
    let node_f = |n: Node, th: f64| 0.5 * (t(n, th) - t(n.odd_child(), th) - t(n.even_child(), th));
    let root_const = 0.5 * t(Node::ROOT, s2);

    let levels = inst.levels;
    let internal: Vec<Node> = inst.internal_nodes().collect();
    // best[n][j]: best subtree value with θ_n = pts[j]; sbest: suffix max and its argmax.
    let mut best: NodeMap<Vec<f64>> = NodeMap::from_fn(levels - 1, |_| Vec::new());
    let mut sarg: NodeMap<Vec<usize>> = NodeMap::from_fn(levels - 1, |_| Vec::new());
    for &n in internal.iter().rev() {
        let base = node_f(n, s2);
        let mut v: Vec<f64> = pts.iter().map(|&th| node_f(n, th) - base).collect();
        if n.k < levels - 1 {
            for c in [n.odd_child(), n.even_child()] {
                let bc = best.get(c);
                let ac = sarg.get(c);
                for j in 0..np {
                    v[j] += bc[ac[j]];
                }
            }
        }
        let mut arg = vec![np - 1; np];
        for j in (0..np - 1).rev() {
            arg[j] = if v[j] >= v[arg[j + 1]] { j } else { arg[j + 1] };
        }
        best.set(n, v);
        sarg.set(n, arg);
    }

    let mut idx: NodeMap<usize> = NodeMap::from_fn(levels - 1, |_| 0);
    for &n in &internal {
        let from = match n.parent() {
            None => 0,
            Some(par) => *idx.get(par),
        };
        idx.set(n, sarg.get(n)[from]);
    }
    let root_j = *idx.get(Node::ROOT);
    let value = root_const + best.get(Node::ROOT)[root_j];
    let theta = idx.map(|_, &j| SymMatrix::scalar(pts[j]));
    Ok(GridResult { theta, value, grid_points: np })
}

fn near(a: &SymMatrix, b: &SymMatrix, tol: &Tolerance) -> bool {
    (a - b).max_abs() <= tol.eq_eps * (1.0 + b.max_abs())
}

/// Closed forms for degenerate patterns: all `D = Σ_X` gives 0; all non-root
/// `D = Σ_X` gives `½ log |Σ_X| / |D_{1,1}|`.
pub fn known_closedforms(inst: &ProblemInstance, tol: &Tolerance) -> Option<f64> {
    let sigma = &inst.sigma_x;
    let others_trivial = inst.distortions.iter().filter(|(n, _)| !n.is_root()).all(|(_, d)| near(d, sigma, tol));
    if !others_trivial {
        return None;
    }
    let root = inst.d(Node::ROOT);
    if near(root, sigma, tol) {
        return Some(0.0);
    }
    Some(0.5 * (logdet(sigma, tol).ok()? - logdet(root, tol).ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::objective_theta;

    fn scalar(sigma: f64, d: &[f64]) -> ProblemInstance {
        let levels = (d.len() + 1).trailing_zeros() as usize;
        let map = NodeMap::from_vec(levels, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
        ProblemInstance::new(SymMatrix::scalar(sigma), levels, map).unwrap()
    }

    #[test]
    fn forced_optimum() {
        let inst = scalar(1.0, &[0.25, 1.0, 1.0]);
        let g = scalar_grid_max(&inst, GridSpec::new(1e-4).unwrap()).unwrap();
        assert!((g.value - 0.5 * 4f64.ln()).abs() < 1e-4);
        assert!((g.theta.get(Node::ROOT).get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_is_zero() {
        let inst = scalar(2.0, &[2.0; 7]);
        let g = scalar_grid_max(&inst, GridSpec::new(1e-3).unwrap()).unwrap();
        assert!(g.value.abs() < 1e-15);
        assert_eq!(known_closedforms(&inst, &Tolerance::default()), Some(0.0));
    }

    #[test]
    fn reported_value_matches_objective_at_reported_point() {
        let tol = Tolerance::default();
        let inst = scalar(1.0, &[0.1, 0.3, 0.35, 0.5, 0.6, 0.55, 0.7]);
        let g = scalar_grid_max(&inst, GridSpec::new(1e-3).unwrap()).unwrap();
        let direct = objective_theta(&inst, &g.theta, &tol).unwrap();
        assert!((g.value - direct).abs() < 1e-12);
    }

    #[test]
    fn refinement_is_monotone_and_stable() {
        let inst = scalar(1.0, &[0.3, 0.5, 0.5]);
        let coarse = scalar_grid_max(&inst, GridSpec::new(2e-5).unwrap()).unwrap();
        let fine = scalar_grid_max(&inst, GridSpec::new(1e-5).unwrap()).unwrap();
        assert!(fine.value >= coarse.value);
        assert!(fine.value - coarse.value < 1e-5);
    }

    #[test]
    fn interior_scalar_optimum() {
        // Σ_S = (0.2, 1, 1): θ* = 0.6.
        let inst = scalar(1.0, &[1.0 / 6.0, 0.5, 0.5]);
        let g = scalar_grid_max(&inst, GridSpec::new(1e-4).unwrap()).unwrap();
        assert!((g.theta.get(Node::ROOT).get(0, 0) - 0.6).abs() < 1e-3);
    }

    #[test]
    fn rejects_matrix_instances_and_bad_resolution() {
        let d = NodeMap::from_fn(2, |_| SymMatrix::identity(2));
        let inst = ProblemInstance::new(SymMatrix::identity(2), 2, d).unwrap();
        assert_eq!(scalar_grid_max(&inst, GridSpec::new(1e-3).unwrap()).unwrap_err().kind(), "UnsupportedDimension");
        assert!(GridSpec::new(0.0).is_err());
        assert!(GridSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn central_only_closed_form() {
        let mut d = NodeMap::from_fn(2, |_| SymMatrix::identity(2));
        d.set(Node::ROOT, SymMatrix::diagonal(&[0.5, 0.25]));
        let inst = ProblemInstance::new(SymMatrix::identity(2), 2, d).unwrap();
        let v = known_closedforms(&inst, &Tolerance::default()).unwrap();
        assert!((v - 0.5 * 8f64.ln()).abs() < 1e-12);
        assert_eq!(known_closedforms(&scalar(1.0, &[0.3, 0.5, 0.5]), &Tolerance::default()), None);
    }
}
