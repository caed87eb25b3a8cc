//! Primal-dual path following on the optimality system.
//!
//! Unknowns: `Θ_n` per internal node and `M_j` per slack node. Equations:
//! `G_n(Θ_n) + M_n - Σ M_child = 0` and `½(M_j s_j + s_j M_j) = σ I`, with
//! `σ` driven geometrically to zero. Steps stay strictly inside the cone
//! (`s_j ≻ 0`, `M_j ≻ 0`) by a fraction-to-boundary rule.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Mat, SymMatrix};
use crate::objective::{slack, InfoObjective, ThetaAssignment};
use crate::optimizer::barrier::slack_direction;
use crate::optimizer::kkt::{child_slack_nodes, slack_nodes, MultiplierSet};
use crate::tree::{Node, NodeMap, ProblemInstance};

pub(crate) struct PolishResult {
    pub theta: ThetaAssignment,
    pub multipliers: MultiplierSet,
    pub iterations: usize,
    pub complementarity: f64,
    pub stationarity: f64,
}

struct Layout {
    m: usize,
    d: usize,
    levels: usize,
    internal: Vec<Node>,
    slacks: Vec<Node>,
    pairs: Vec<(usize, usize)>,
}

impl Layout {
    fn new(levels: usize, m: usize) -> Self {
        let mut pairs = Vec::new();
        for a in 0..m {
            for b in a..m {
                pairs.push((a, b));
            }
        }
        Layout {
            m,
            d: pairs.len(),
            levels,
            internal: crate::tree::nodes(levels - 1).collect(),
            slacks: slack_nodes(levels).collect(),
            pairs,
        }
    }

    fn unknowns(&self) -> usize {
        (self.internal.len() + self.slacks.len()) * self.d
    }

    fn slack_index(&self, j: Node) -> usize {
        self.slacks.iter().position(|&x| x == j).expect("slack node")
    }

    fn basis(&self, p: usize) -> SymMatrix {
        let (a, b) = self.pairs[p];
        let mut e = Mat::zeros(self.m, self.m);
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        SymMatrix::from_mat(e)
    }

    fn write(&self, out: &mut [f64], block: usize, s: &SymMatrix) {
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            out[block * self.d + p] = s.get(a, b);
        }
    }

    fn read(&self, v: &[f64], block: usize) -> SymMatrix {
        let mut e = Mat::zeros(self.m, self.m);
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let x = v[block * self.d + p];
            e[(a, b)] = x;
            e[(b, a)] = x;
        }
        SymMatrix::from_mat(e)
    }
}

fn jordan(a: &SymMatrix, b: &SymMatrix) -> SymMatrix {
    SymMatrix::from_mat(a.as_mat() * b.as_mat())
}

pub(crate) fn polish(
    obj: &InfoObjective,
    inst: &ProblemInstance,
    theta: &ThetaAssignment,
    multipliers: &MultiplierSet,
    max_iter: usize,
) -> Option<PolishResult> {
    let lay = Layout::new(inst.levels, inst.m);
    let n_int = lay.internal.len();
    let n = lay.unknowns();
    let mut th = theta.clone();
    let mut ms = multipliers.clone();
    let width = (inst.m * lay.slacks.len()) as f64;

    let slacks_of = |th: &ThetaAssignment| -> Vec<SymMatrix> {
        lay.slacks.iter().map(|&j| slack(inst, th, j).expect("slack node")).collect()
    };
    let scale = 1.0 + th.iter().fold(0.0f64, |acc, (nd, t)| acc.max(obj.node_term(nd, t).1.max_abs()));

    let mut iterations = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for it in 0..max_iter {
        iterations = it;
        let ss = slacks_of(&th);
        let comp: f64 = lay.slacks.iter().zip(&ss).map(|(&j, s)| ms.get(j).dot(s)).sum::<f64>() / width;
        let grads: Vec<(SymMatrix, [SymMatrix; 3])> = lay
            .internal
            .iter()
            .map(|&nd| {
                let t = th.get(nd);
                let (_, g) = obj.node_term(nd, t);
                let parts = [obj.term(nd, t).1, obj.term(nd.odd_child(), t).1, obj.term(nd.even_child(), t).1];
                (g, parts)
            })
            .collect();
        let stat_res: Vec<SymMatrix> = lay
            .internal
            .iter()
            .zip(&grads)
            .map(|(&nd, (g, _))| {
                let mut r = g + ms.get(nd);
                for c in child_slack_nodes(lay.levels, nd) {
                    r = &r - ms.get(c);
                }
                r
            })
            .collect();
        let stat = stat_res.iter().fold(0.0f64, |a, r| a.max(r.max_abs()));
        last = (comp, stat);
        if comp <= 1e-15 * scale && stat <= 1e-13 * scale {
            break;
        }
        let sigma_t = 0.1 * comp;

        let mut rhs = vec![0.0; n];
        for (b, r) in stat_res.iter().enumerate() {
            lay.write(&mut rhs, b, &(-r));
        }
        for (q, (&j, s)) in lay.slacks.iter().zip(&ss).enumerate() {
            let c = &jordan(ms.get(j), s) - &SymMatrix::identity(inst.m).scale(sigma_t);
            lay.write(&mut rhs, n_int + q, &(-&c));
        }

        let mut jac = Mat::zeros(n, n);
        let mut col = vec![0.0; n];
        // Θ columns.
        for (b, &nd) in lay.internal.iter().enumerate() {
            let (_, parts) = &grads[b];
            for p in 0..lay.d {
                col.iter_mut().for_each(|x| *x = 0.0);
                let e = lay.basis(p);
                let dg = |g: &SymMatrix| SymMatrix::from_mat(g.as_mat() * e.as_mat() * g.as_mat());
                let dr = &(&dg(&parts[1]) + &dg(&parts[2])) - &dg(&parts[0]);
                lay.write(&mut col, b, &dr);
                // s_nd gains +E; child slacks lose E.
                let own = lay.slack_index(nd);
                lay.write(&mut col, n_int + own, &jordan(ms.get(nd), &e));
                for c in child_slack_nodes(lay.levels, nd) {
                    let q = lay.slack_index(c);
                    lay.write(&mut col, n_int + q, &(-&jordan(ms.get(c), &e)));
                }
                for (row, v) in col.iter().enumerate() {
                    jac[(row, b * lay.d + p)] = *v;
                }
            }
        }
        // M columns.
        for (q, (&j, s)) in lay.slacks.iter().zip(&ss).enumerate() {
            for p in 0..lay.d {
                col.iter_mut().for_each(|x| *x = 0.0);
                let e = lay.basis(p);
                if j.k < lay.levels {
                    let b = lay.internal.iter().position(|&x| x == j).expect("internal");
                    lay.write(&mut col, b, &e);
                }
                if let Some(par) = j.parent() {
                    let b = lay.internal.iter().position(|&x| x == par).expect("internal");
                    let mut cur = lay.read(&col, b);
                    cur = &cur - &e;
                    lay.write(&mut col, b, &cur);
                }
                lay.write(&mut col, n_int + q, &jordan(&e, s));
                for (row, v) in col.iter().enumerate() {
                    jac[(row, (n_int + q) * lay.d + p)] = *v;
                }
            }
        }

        let rhs_v = nalgebra::DVector::from_vec(rhs);
        let step = match jac.clone().lu().solve(&rhs_v) {
            Some(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => jac.svd(true, true).solve(&rhs_v, 1e-14).ok()?,
        };
        let step: Vec<f64> = step.iter().copied().collect();

        let dth: Vec<SymMatrix> = (0..n_int).map(|b| lay.read(&step, b)).collect();
        let dms: Vec<SymMatrix> = (0..lay.slacks.len()).map(|q| lay.read(&step, n_int + q)).collect();
        let dth_map = NodeMap::from_vec(inst.levels - 1, dth.clone()).ok()?;
        let mut alpha: f64 = 1.0;
        for (q, &j) in lay.slacks.iter().enumerate() {
            let ds = slack_direction(inst, &dth_map, j);
            alpha = crate::linalg::max_step(&ss[q], &ds, alpha)?;
            alpha = crate::linalg::max_step(ms.get(j), &dms[q], alpha)?;
        }
        let alpha = if alpha >= 1.0 { 1.0 } else { 0.995 * alpha };
        for (b, &nd) in lay.internal.iter().enumerate() {
            th.set(nd, th.get(nd) + &dth[b].scale(alpha));
        }
        for (q, &j) in lay.slacks.iter().enumerate() {
            ms.set(j, ms.get(j) + &dms[q].scale(alpha));
        }
        if th.values().iter().chain(ms.values()).any(|x| !x.is_finite()) {
            return None;
        }
    }
    Some(PolishResult { theta: th, multipliers: ms, iterations, complementarity: last.0, stationarity: last.1 })
}
