//! Constrained maximization of the sum-rate objective.
//!
//! Each start runs a decreasing-`μ` barrier schedule with L-BFGS inner
//! ascent, then a primal-dual path-following polish that drives the
//! complementarity to rounding level. The best start wins.

mod barrier;
pub mod kkt;
mod polish;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use barrier::{barrier_gradient, barrier_value};
pub use kkt::{kkt_residual, recover_multipliers, slack_nodes, KktResiduals, MultiplierSet, NodeResidual};

use crate::error::Error;
use crate::linalg::{psd_factor, Mat, SymMatrix, Tolerance};
use crate::objective::{default_chain, slack, InfoObjective, ThetaAssignment};
use crate::tree::{NodeMap, ProblemInstance};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverConfig {
    pub barrier_mu0: f64,
    pub barrier_decay: f64,
    /// Barrier schedule stops once `μ` drops below this.
    pub mu_min: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative gradient tolerance for each barrier subproblem.
    pub grad_tol: f64,
    /// Slacks with smallest eigenvalue above this are treated as inactive.
    pub slack_tol: f64,
    /// Start offset: `Θ_{k,i} = (k/L)(1 - delta) Σ_X`.
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub polish: bool,
    pub max_polish: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            barrier_mu0: 1.0,
            barrier_decay: 0.2,
            mu_min: 1e-2,
            max_outer: 40,
            max_inner: 3000,
            grad_tol: 1e-8,
            slack_tol: 1e-7,
            delta: 1e-3,
            seeds: vec![0, 1, 2, 3, 4],
            polish: true,
            max_polish: 80,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<(), Error> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.barrier_mu0) {
            return Err(Error::InvalidConfig("barrier_mu0 must be positive"));
        }
        if !(self.barrier_decay > 0.0 && self.barrier_decay < 1.0) {
            return Err(Error::InvalidConfig("barrier_decay must lie in (0, 1)"));
        }
        if !pos(self.mu_min) || !pos(self.grad_tol) || !pos(self.slack_tol) {
            return Err(Error::InvalidConfig("tolerances must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct StartSummary {
    pub seed: u64,
    pub value_nats: f64,
    pub kkt_max: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SolveReport {
    pub theta: ThetaAssignment,
    pub value_nats: f64,
    pub multipliers: MultiplierSet,
    pub kkt: KktResiduals,
    pub converged: bool,
    pub polished: bool,
    pub best_seed: u64,
    pub iterations: usize,
    pub mu_final: f64,
    /// Objective at the end of each barrier subproblem.
    pub outer_values: Vec<f64>,
    pub starts: Vec<StartSummary>,
}

/// Maximizes the objective over the chain constraints. Boundary instances
/// (`D = Σ_X` at some nodes) are handled directly.
pub fn solve(inst: &ProblemInstance, cfg: &SolverConfig, tol: &Tolerance) -> Result<SolveReport, Error> {
    cfg.check()?;
    tol.check()?;
    inst.validate(tol)?;
    let obj = InfoObjective::new(inst)?;
    let base = default_chain(inst, cfg.delta);
    let mut best: Option<SolveReport> = None;
    let mut starts = Vec::with_capacity(cfg.seeds.len());
    for (idx, &seed) in cfg.seeds.iter().enumerate() {
        let start = if idx == 0 { base.clone() } else { perturbed_start(inst, &base, seed, tol) };
        let run = run_start(&obj, inst, start, seed, cfg);
        log::debug!(
            "seed {seed}: value {:.15} kkt {:.3e} converged {}",
            run.value_nats,
            run.kkt.max(),
            run.converged
        );
        starts.push(StartSummary { seed, value_nats: run.value_nats, kkt_max: run.kkt.max(), converged: run.converged });
        let better = match &best {
            None => true,
            Some(b) => run.value_nats > b.value_nats + 1e-12 * (1.0 + b.value_nats.abs()) || (!b.converged && run.converged && run.value_nats >= b.value_nats - 1e-9 * (1.0 + b.value_nats.abs())),
        };
        if better {
            best = Some(run);
        }
    }
    let mut report = best.expect("at least one seed");
    let spread = starts
        .iter()
        .filter(|s| s.converged)
        .map(|s| report.value_nats - s.value_nats)
        .fold(0.0f64, f64::max);
    if spread > 1e-6 * (1.0 + report.value_nats.abs()) {
        log::info!("multistart values differ by {spread:.3e}; keeping seed {}", report.best_seed);
    }
    report.starts = starts;
    if report.converged {
        Ok(report)
    } else {
        Err(Error::NotConverged(Box::new(report)))
    }
}

/// Seeded symmetric perturbation of `base`, shrunk toward `base` until
/// strictly feasible.
fn perturbed_start(inst: &ProblemInstance, base: &ThetaAssignment, seed: u64, tol: &Tolerance) -> ThetaAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = inst.m;
    let f = psd_factor(&inst.sigma_x, tol).unwrap_or_else(|_| Mat::identity(m, m));
    let l = inst.levels as f64;
    let pert = base.map(|n, _| {
        let r = Mat::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sym = SymMatrix::from_mat(r).scale(0.5 / l * n.k as f64);
        SymMatrix::from_mat(&f * sym.as_mat() * f.transpose())
    });
    let mut t = 1.0;
    for _ in 0..60 {
        let cand = base.map(|n, b| b + &pert.get(n).scale(t));
        let feasible = slack_nodes(inst.levels)
            .all(|j| slack(inst, &cand, j).and_then(|s| s.cholesky()).is_some());
        if feasible {
            return cand;
        }
        t *= 0.5;
    }
    base.clone()
}

const INNER_REL: f64 = 1e-2;

fn run_start(obj: &InfoObjective, inst: &ProblemInstance, start: ThetaAssignment, seed: u64, cfg: &SolverConfig) -> SolveReport {
    let b = barrier::Barrier { obj, inst };
    let mut th = start;
    let mut mu = cfg.barrier_mu0;
    let mut outer_values = Vec::new();
    let mut iterations = 0;
    let mut inner_ok = false;
    for _ in 0..cfg.max_outer {
        // Centres only need accuracy proportional to μ; the polish certifies the end point.
        let is_last = mu * cfg.barrier_decay < cfg.mu_min;
        let tol = if is_last && !cfg.polish { cfg.grad_tol } else { cfg.grad_tol.max(INNER_REL * mu) };
        let r = barrier::ascend(&b, &mut th, mu, tol, cfg.max_inner);
        log::trace!("mu {mu:.1e}: {} inner iterations, converged {}", r.iterations, r.converged);
        iterations += r.iterations;
        inner_ok = r.converged;
        outer_values.push(obj.value(&th));
        if mu * cfg.barrier_decay < cfg.mu_min {
            break;
        }
        mu *= cfg.barrier_decay;
    }
    let point = b.eval(&th, mu);
    let mut ms = match &point {
        Some(p) => barrier::barrier_multipliers(p, mu, inst.m),
        None => NodeMap::from_fn(inst.levels, |_| SymMatrix::zeros(inst.m)),
    };
    let mut polished = false;
    if cfg.polish && point.is_some() {
        if let Some(p) = polish::polish(obj, inst, &th, &ms, cfg.max_polish) {
            let candidate = kkt::kkt_residual_with(obj, inst, &p.theta, &p.multipliers);
            let current = kkt::kkt_residual_with(obj, inst, &th, &ms);
            log::debug!(
                "polish: {} iterations, complementarity {:.3e}, stationarity {:.3e}, kkt {:.3e} vs {:.3e}",
                p.iterations,
                p.complementarity,
                p.stationarity,
                candidate.max(),
                current.max()
            );
            if candidate.max() < current.max() {
                th = p.theta;
                ms = p.multipliers;
                polished = true;
            }
        }
    }
    // Inactive slacks carry exactly zero multipliers.
    for j in slack_nodes(inst.levels) {
        let s = slack(inst, &th, j).expect("slack node");
        if s.min_eigenvalue() > cfg.slack_tol * (1.0 + s.max_abs()) {
            ms.set(j, SymMatrix::zeros(inst.m));
        }
    }
    let kkt = kkt::kkt_residual_with(obj, inst, &th, &ms);
    let scale = 1.0 + th.iter().fold(0.0f64, |acc, (n, t)| acc.max(obj.node_term(n, t).1.max_abs()));
    let converged = (inner_ok || polished) && kkt.max() <= 1e-6 * scale;
    SolveReport {
        value_nats: obj.value(&th),
        theta: th,
        multipliers: ms,
        kkt,
        converged,
        polished,
        best_seed: seed,
        iterations,
        mu_final: mu,
        outer_values,
        starts: Vec::new(),
    }
}

/// Solves on `D - ε λ_min(Σ_X) I` for each factor in `factors`.
pub fn epsilon_schedule(
    inst: &ProblemInstance,
    factors: &[f64],
    cfg: &SolverConfig,
    tol: &Tolerance,
) -> Result<Vec<(f64, SolveReport)>, Error> {
    let lmin = inst.sigma_x.min_eigenvalue();
    let mut out = Vec::with_capacity(factors.len());
    for &f in factors {
        let eps = f * lmin;
        let shrunk = inst.epsilon_shrink(eps, tol)?;
        let rep = match solve(&shrunk, cfg, tol) {
            Ok(r) => r,
            Err(Error::NotConverged(r)) => *r,
            Err(e) => return Err(e),
        };
        out.push((eps, rep));
    }
    Ok(out)
}
