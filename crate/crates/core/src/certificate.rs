//! End-to-end pipeline: solve, enhance, build the test channel and check that
//! it achieves the optimizer's value while meeting every distortion constraint.
//!
//! Boundary instances (some `D = Σ_X`) are solved directly and, for the
//! construction, on `D - ε I` for a decreasing `ε` schedule; the certificate
//! is issued for the smallest `ε`, whose scheme also meets the original `D`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::Tolerance;
use crate::optimizer::{solve, SolveReport, SolverConfig};
use crate::scheme::{
    achievable_sum_rate, build_lambda_gamma_lenient, build_q_tree, distortion_check, enhance, q_tree_residuals,
    sum_rate_enhanced, verify_enhancement, AchievableRate, DistortionRow, EnhancedSigmas, EnhancementResiduals,
    QTreeResiduals, SchemeConstruction,
};
use crate::tree::ProblemInstance;

/// Acceptance thresholds for a VERIFIED certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CertificateTolerances {
    /// Every KKT residual.
    pub kkt: f64,
    /// Every enhancement identity.
    pub enhancement: f64,
    /// `Λ ⪰ -structure·(1 + ‖Λ‖) I`, `H` identities and the `Γ` block inverse.
    pub structure: f64,
    /// `|achievable - value| ≤ rate·(1 + |value|)`.
    pub rate: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        CertificateTolerances { kkt: 1e-6, enhancement: 1e-6, structure: 1e-8, rate: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyOptions {
    pub solver: SolverConfig,
    pub tol: Tolerance,
    pub thresholds: CertificateTolerances,
    /// Multiples of `λ_min(Σ_X)` tried on boundary instances.
    pub eps_factors: Vec<f64>,
    /// Absolute `ε` replacing the schedule.
    pub eps: Option<f64>,
    /// Extra multistart seeds used once if some `Λ` is not PSD.
    pub retry_seeds: Vec<u64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            solver: SolverConfig::default(),
            tol: Tolerance::default(),
            thresholds: CertificateTolerances::default(),
            eps_factors: vec![1e-3, 1e-4, 1e-5],
            eps: None,
            retry_seeds: vec![5, 6, 7, 8, 9],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CertificateStatus {
    #[cfg_attr(feature = "serde", serde(rename = "VERIFIED"))]
    Verified,
    #[cfg_attr(feature = "serde", serde(rename = "UNVERIFIED"))]
    Unverified,
    #[cfg_attr(feature = "serde", serde(rename = "FAILED"))]
    Failed,
}

impl CertificateStatus {
    pub fn label(self) -> &'static str {
        match self {
            CertificateStatus::Verified => "VERIFIED",
            CertificateStatus::Unverified => "UNVERIFIED",
            CertificateStatus::Failed => "FAILED",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpsilonStep {
    pub eps: f64,
    pub value_nats: f64,
    pub converged: bool,
}

/// Everything computed for one instance. Stages after a failure are `None`.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub status: CertificateStatus,
    /// Optimal value on the instance as given.
    pub value_nats: f64,
    pub converged: bool,
    /// Instance the construction was built for (`D - ε I` on boundary instances).
    pub certified_instance: ProblemInstance,
    pub epsilon_used: Option<f64>,
    pub epsilon_sequence: Vec<EpsilonStep>,
    /// Solve on `certified_instance`.
    pub report: SolveReport,
    pub enhanced: Option<EnhancedSigmas>,
    pub enhancement: Option<EnhancementResiduals>,
    pub sum_rate_enhanced: Option<f64>,
    pub scheme: Option<SchemeConstruction>,
    pub q_tree: Option<QTreeResiduals>,
    pub achievable: Option<AchievableRate>,
    pub distortions: Vec<DistortionRow>,
    /// Downstream error that stopped the construction.
    pub failure: Option<Error>,
    /// Whether the extra multistart seeds were used.
    pub retried: bool,
    /// Failed checks, empty when VERIFIED.
    pub reasons: Vec<&'static str>,
}

impl Certificate {
    pub fn certified_value(&self) -> f64 {
        self.report.value_nats
    }
}

fn solve_any(inst: &ProblemInstance, cfg: &SolverConfig, tol: &Tolerance) -> Result<SolveReport, Error> {
    match solve(inst, cfg, tol) {
        Ok(r) => Ok(r),
        Err(Error::NotConverged(r)) => Ok(*r),
        Err(e) => Err(e),
    }
}

struct Built {
    enhanced: Option<EnhancedSigmas>,
    enhancement: Option<EnhancementResiduals>,
    sum_rate_enhanced: Option<f64>,
    scheme: Option<SchemeConstruction>,
    q_tree: Option<QTreeResiduals>,
    achievable: Option<AchievableRate>,
    distortions: Vec<DistortionRow>,
    failure: Option<Error>,
}

fn build(inst: &ProblemInstance, rep: &SolveReport, tol: &Tolerance) -> Built {
    let mut b = Built {
        enhanced: None,
        enhancement: None,
        sum_rate_enhanced: None,
        scheme: None,
        q_tree: None,
        achievable: None,
        distortions: Vec::new(),
        failure: None,
    };
    let th = &rep.theta;
    let es = match enhance(inst, th, &rep.multipliers, tol) {
        Ok(es) => es,
        Err(e) => {
            b.failure = Some(e);
            return b;
        }
    };
    b.enhancement = Some(verify_enhancement(inst, th, &rep.multipliers, &es));
    b.enhanced = Some(es.clone());
    match sum_rate_enhanced(inst, th, &es) {
        Ok(v) => b.sum_rate_enhanced = Some(v),
        Err(e) => {
            b.failure = Some(e);
            return b;
        }
    }
    let sc = match build_lambda_gamma_lenient(th, &es) {
        Ok(sc) => build_q_tree(&es, sc),
        Err(e) => {
            b.failure = Some(e);
            return b;
        }
    };
    b.q_tree = Some(q_tree_residuals(th, &es, &sc));
    let rest = achievable_sum_rate(inst, th, &es, &sc)
        .and_then(|a| distortion_check(inst, &es, &sc, tol).map(|d| (a, d)));
    match rest {
        Ok((a, d)) => {
            b.achievable = Some(a);
            b.distortions = d;
        }
        Err(e) => b.failure = Some(e),
    }
    b.scheme = Some(sc);
    b
}

fn lambda_bad(b: &Built, th: &CertificateTolerances) -> bool {
    b.scheme.as_ref().is_some_and(|sc| sc.lambda_negativity() > th.structure)
}

fn judge(rep: &SolveReport, b: &Built, th: &CertificateTolerances) -> (CertificateStatus, Vec<&'static str>) {
    let mut reasons = Vec::new();
    if b.failure.is_some() {
        reasons.push("construction failed");
        return (CertificateStatus::Failed, reasons);
    }
    if !rep.converged {
        reasons.push("solver did not converge");
    }
    if rep.kkt.max() > th.kkt {
        reasons.push("KKT residual above tolerance");
    }
    if b.enhancement.as_ref().is_none_or(|e| e.max() > th.enhancement) {
        reasons.push("enhancement identity residual above tolerance");
    }
    match &b.scheme {
        Some(sc) => {
            if sc.lambda_negativity() > th.structure {
                reasons.push("Lambda not PSD");
            }
            if sc.max_h_sum_residual() > th.structure || sc.max_h_lambda_residual() > th.structure {
                reasons.push("H identities above tolerance");
            }
            if sc.max_gamma_inverse_residual() > th.structure {
                reasons.push("Gamma block inverse above tolerance");
            }
        }
        None => reasons.push("no construction"),
    }
    let v = rep.value_nats;
    match &b.achievable {
        Some(a) if libm::fabs(a.direct - v) <= th.rate * (1.0 + libm::fabs(v)) && a.gap() <= th.rate * (1.0 + libm::fabs(v)) => {}
        _ => reasons.push("achievable rate differs from optimum"),
    }
    if b.distortions.is_empty() || !b.distortions.iter().all(|r| r.satisfied) {
        reasons.push("distortion constraint violated");
    }
    let status = if reasons.is_empty() { CertificateStatus::Verified } else { CertificateStatus::Unverified };
    (status, reasons)
}

/// Runs the full pipeline. Input errors (invalid instance or configuration)
/// are returned as `Err`; numerical shortfalls lower the status instead.
pub fn certify(inst: &ProblemInstance, opts: &CertifyOptions) -> Result<Certificate, Error> {
    opts.tol.check()?;
    opts.solver.check()?;
    inst.validate(&opts.tol)?;
    let tol = &opts.tol;

    let boundary = !inst.is_strictly_interior(tol);
    let direct = solve_any(inst, &opts.solver, tol)?;
    let mut epsilon_sequence = Vec::new();
    let (mut target, mut epsilon_used) = (inst.clone(), None);
    let mut rep = direct.clone();
    if boundary || opts.eps.is_some() {
        let lmin = inst.sigma_x.min_eigenvalue();
        let eps_list: Vec<f64> = match opts.eps {
            Some(e) => vec![e],
            None => opts.eps_factors.iter().map(|f| f * lmin).collect(),
        };
        for eps in eps_list {
            let shrunk = inst.epsilon_shrink(eps, tol)?;
            let r = solve_any(&shrunk, &opts.solver, tol)?;
            epsilon_sequence.push(EpsilonStep { eps, value_nats: r.value_nats, converged: r.converged });
            target = shrunk;
            epsilon_used = Some(eps);
            rep = r;
        }
    }

    let mut built = build(&target, &rep, tol);
    let mut retried = false;
    if lambda_bad(&built, &opts.thresholds) && !opts.retry_seeds.is_empty() {
        let mut cfg = opts.solver.clone();
        for &s in &opts.retry_seeds {
            if !cfg.seeds.contains(&s) {
                cfg.seeds.push(s);
            }
        }
        let r = solve_any(&target, &cfg, tol)?;
        let b = build(&target, &r, tol);
        log::info!("Lambda not PSD; retried with {} seeds", cfg.seeds.len());
        retried = true;
        if !lambda_bad(&b, &opts.thresholds) || r.value_nats > rep.value_nats {
            rep = r;
            built = b;
        }
    }

    let (status, reasons) = judge(&rep, &built, &opts.thresholds);
    Ok(Certificate {
        status,
        value_nats: direct.value_nats,
        converged: direct.converged && rep.converged,
        certified_instance: target,
        epsilon_used,
        epsilon_sequence,
        report: rep,
        enhanced: built.enhanced,
        enhancement: built.enhancement,
        sum_rate_enhanced: built.sum_rate_enhanced,
        scheme: built.scheme,
        q_tree: built.q_tree,
        achievable: built.achievable,
        distortions: built.distortions,
        failure: built.failure,
        retried,
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::tree::{Node, NodeMap};

    fn scalar(sigma: f64, d: &[f64]) -> ProblemInstance {
        let levels = (d.len() + 1).trailing_zeros() as usize;
        let map = NodeMap::from_vec(levels, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
        ProblemInstance::new(SymMatrix::scalar(sigma), levels, map).unwrap()
    }

    #[test]
    fn interior_scalar_is_verified() {
        let c = certify(&scalar(1.0, &[0.25, 0.9, 0.9]), &CertifyOptions::default()).unwrap();
        assert_eq!(c.status, CertificateStatus::Verified, "{:?}", c.reasons);
        assert!((c.value_nats - 0.5 * 4f64.ln()).abs() < 1e-9);
        assert!(c.epsilon_used.is_none());
    }

    #[test]
    fn boundary_scalar_uses_schedule() {
        let c = certify(&scalar(1.0, &[0.25, 1.0, 1.0]), &CertifyOptions::default()).unwrap();
        assert_eq!(c.status, CertificateStatus::Verified, "{:?}", c.reasons);
        assert_eq!(c.epsilon_sequence.len(), 3);
        assert_eq!(c.epsilon_used, Some(1e-5));
        assert!((c.value_nats - 0.5 * 4f64.ln()).abs() < 1e-9);
        assert!((c.certified_value() - c.value_nats).abs() < 1e-4);
        assert!(c.distortions.iter().all(|r| r.satisfied));
        let root = c.distortions.iter().find(|r| r.node == Node::ROOT).unwrap();
        assert!(root.achieved.get(0, 0) <= 0.25);
    }

    #[test]
    fn invalid_instance_is_an_error() {
        let inst = scalar(1.0, &[0.25, 1.5, 1.0]);
        assert_eq!(certify(&inst, &CertifyOptions::default()).unwrap_err().kind(), "InvalidInstance");
    }
}
