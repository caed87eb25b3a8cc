//! Sampling check of the test channel.
//!
//! Samples are drawn in shards of [`SHARD`] with one ChaCha8 stream per shard
//! (seeded by `seed`, stream = shard index) and merged in shard order, so the
//! report is a pure function of `(inputs, n_samples, seed)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::linalg::{psd_factor, Mat, SymMatrix, Tolerance};
use crate::objective::ThetaAssignment;
use crate::scheme::construction::{subset_law, SchemeConstruction};
use crate::scheme::enhance::EnhancedSigmas;
use crate::tree::{Node, ProblemInstance};

pub const SHARD: usize = 65_536;

/// Largest entrywise deviation of an empirical second moment from its exact
/// value, in units of that entry's standard deviation, against `5 / √N`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MomentCheck {
    pub node: Option<Node>,
    pub deviation: f64,
    pub bound: f64,
}

impl MomentCheck {
    pub fn passed(&self) -> bool {
        self.deviation <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct McReport {
    pub n_samples: usize,
    pub seed: u64,
    /// `cov̂(U)` against `1 1^T ⊗ Σ_X + q_joint`.
    pub u_cov: MomentCheck,
    /// `Ê[(X̂_n + Q_odd)(X̂_n + Q_even)^T]` against zero, per internal node.
    pub cross_moments: Vec<MomentCheck>,
    /// Empirical MMSE error covariance per node against the analytic one.
    pub distortions: Vec<MomentCheck>,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.u_cov.passed() && self.cross_moments.iter().chain(&self.distortions).all(MomentCheck::passed)
    }

    pub fn max_cross_moment(&self) -> f64 {
        self.cross_moments.iter().fold(0.0, |a, c| a.max(c.deviation))
    }
}

/// Row-major copy of a factor, for tight inner loops.
struct Factor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Factor {
    fn new(f: &Mat) -> Self {
        let (rows, cols) = f.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f[(r, c)]);
            }
        }
        Factor { rows, cols, data }
    }

    /// `out = F z` with fresh standard normals `z`.
    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        for v in z[..self.cols].iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (o, row) in out[..self.rows].iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(&z[..self.cols]).map(|(a, b)| a * b).sum();
        }
    }
}

fn add_outer(acc: &mut [f64], a: &[f64], b: &[f64]) {
    let w = b.len();
    for (i, &x) in a.iter().enumerate() {
        let row = &mut acc[i * w..(i + 1) * w];
        for (r, &y) in row.iter_mut().zip(b) {
            *r += x * y;
        }
    }
}

/// Standardized deviation of `acc / n` from `target`. The per-entry standard
/// deviation of a product is `sqrt(A_aa B_bb + C_ab²)`, with `A`, `B` the
/// covariances of the two factors and `C` their cross covariance (`target`).
fn moment_check(node: Option<Node>, acc: &[f64], n: usize, target: &Mat, var_a: &[f64], var_b: &[f64]) -> MomentCheck {
    let (r, c) = target.shape();
    let mut deviation = 0.0f64;
    for i in 0..r {
        for j in 0..c {
            let t = target[(i, j)];
            let std = libm::sqrt(var_a[i] * var_b[j] + t * t).max(f64::MIN_POSITIVE);
            deviation = deviation.max(libm::fabs(acc[i * c + j] / n as f64 - t) / std);
        }
    }
    MomentCheck { node, deviation, bound: 5.0 / libm::sqrt(n as f64) }
}

fn diag(a: &Mat) -> Vec<f64> {
    (0..a.nrows()).map(|i| a[(i, i)]).collect()
}

pub fn monte_carlo_check(
    inst: &ProblemInstance,
    th: &ThetaAssignment,
    es: &EnhancedSigmas,
    sc: &SchemeConstruction,
    n_samples: usize,
    seed: u64,
    tol: &Tolerance,
) -> Result<McReport, Error> {
    if n_samples == 0 {
        return Err(Error::InvalidSampleCount);
    }
    let q = sc.q_joint.as_ref().ok_or(Error::JointCovSingular)?;
    let m = inst.m;
    let levels = inst.levels;
    let leaves = inst.descriptions();
    let n_nodes = inst.distortions.len();
    let internal: Vec<Node> = inst.internal_nodes().collect();

    let fx = Factor::new(&psd_factor(&inst.sigma_x, tol)?);
    let f11 = Factor::new(&psd_factor(es.get(Node::ROOT), tol)?);
    let mut flam = Vec::with_capacity(internal.len());
    let mut fth = Vec::with_capacity(internal.len());
    for &n in &internal {
        let lam = &sc.nodes.get(n).lambda;
        let f = psd_factor(lam, tol).map_err(|_| Error::LambdaNotPsd { node: n, min_eig: lam.min_eigenvalue() })?;
        flam.push(Factor::new(&f));
        fth.push(Factor::new(&psd_factor(th.get(n), tol)?));
    }
    // MMSE weights W_x = C Σ_U^{-1}.
    let mut weights = Vec::with_capacity(n_nodes);
    for (x, _) in inst.distortions.iter() {
        let (lo, hi) = x.subset(levels);
        let (su, c) = subset_law(inst, q, lo, hi);
        let chol = su.cholesky().ok_or(Error::JointCovSingular)?;
        weights.push((lo, hi, Factor::new(&chol.solve(&c.transpose()).transpose())));
    }

    let du = leaves * m;
    let mut acc_u = vec![0.0; du * du];
    let mut acc_cross = vec![vec![0.0; m * m]; internal.len()];
    let mut acc_err = vec![vec![0.0; m * m]; n_nodes];

    let mut z = vec![0.0; 2 * m];
    let mut x = vec![0.0; m];
    let mut qv = vec![0.0; n_nodes * m];
    let mut pair = vec![0.0; 2 * m];
    let mut u = vec![0.0; du];
    let mut xh = vec![0.0; m];
    let (mut yo, mut ye, mut e) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    let shards = n_samples.div_ceil(SHARD);
    for shard in 0..shards {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shard as u64);
        let count = SHARD.min(n_samples - shard * SHARD);
        for _ in 0..count {
            fx.draw(&mut rng, &mut z, &mut x);
            f11.draw(&mut rng, &mut z, &mut qv[..m]);
            for (b, &n) in internal.iter().enumerate() {
                flam[b].draw(&mut rng, &mut z, &mut pair);
                let p = n.offset() * m;
                for (half, c) in [n.odd_child(), n.even_child()].into_iter().enumerate() {
                    let o = c.offset() * m;
                    for a in 0..m {
                        qv[o + a] = qv[p + a] + pair[half * m + a];
                    }
                }
            }
            for j in 0..leaves {
                let o = Node::new(levels, j + 1).offset() * m;
                for a in 0..m {
                    u[j * m + a] = x[a] + qv[o + a];
                }
            }
            add_outer(&mut acc_u, &u, &u);
            for (b, &n) in internal.iter().enumerate() {
                fth[b].draw(&mut rng, &mut z, &mut xh);
                let (o, ev) = (n.odd_child().offset() * m, n.even_child().offset() * m);
                for a in 0..m {
                    yo[a] = xh[a] + qv[o + a];
                    ye[a] = xh[a] + qv[ev + a];
                }
                add_outer(&mut acc_cross[b], &yo, &ye);
            }
            for (idx, (lo, hi, w)) in weights.iter().enumerate() {
                let us = &u[(lo - 1) * m..hi * m];
                for a in 0..m {
                    let row = &w.data[a * w.cols..(a + 1) * w.cols];
                    e[a] = x[a] - row.iter().zip(us).map(|(p, v)| p * v).sum::<f64>();
                }
                add_outer(&mut acc_err[idx], &e, &e);
            }
        }
    }

    let mut u_target = q.as_mat().clone();
    for a in 0..leaves {
        for b in 0..leaves {
            let mut blk = u_target.view_mut((a * m, b * m), (m, m));
            blk += inst.sigma_x.as_mat();
        }
    }
    let du_diag = diag(&u_target);
    let u_cov = moment_check(None, &acc_u, n_samples, &u_target, &du_diag, &du_diag);

    let zero = Mat::zeros(m, m);
    let cross_moments = internal
        .iter()
        .enumerate()
        .map(|(b, &n)| {
            let t = th.get(n);
            let vo = diag((t + es.get(n.odd_child())).as_mat());
            let ve = diag((t + es.get(n.even_child())).as_mat());
            moment_check(Some(n), &acc_cross[b], n_samples, &zero, &vo, &ve)
        })
        .collect();

    let mut distortions = Vec::with_capacity(n_nodes);
    for (idx, (xn, _)) in inst.distortions.iter().enumerate() {
        let (lo, hi, _) = &weights[idx];
        let (su, c) = subset_law(inst, q, *lo, *hi);
        let chol = su.cholesky().ok_or(Error::JointCovSingular)?;
        let target = SymMatrix::from_mat(inst.sigma_x.as_mat() - &c * chol.solve(&c.transpose()));
        let dv = diag(target.as_mat());
        distortions.push(moment_check(Some(xn), &acc_err[idx], n_samples, target.as_mat(), &dv, &dv));
    }

    Ok(McReport { n_samples, seed, u_cov, cross_moments, distortions })
}
