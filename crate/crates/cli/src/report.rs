//! Report assembly and rendering.

use std::fmt::Write as _;

use mdtree_core::certificate::{Certificate, CertificateStatus, EpsilonStep};
use mdtree_core::optimizer::{KktResiduals, StartSummary};
use mdtree_core::scheme::{AchievableRate, EnhancementResiduals, McReport, QTreeResiduals};
use mdtree_core::tree::PaddedInstance;
use mdtree_core::{NodeMap, ProblemInstance, SymMatrix};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InstanceDigest {
    pub m: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub descriptions: usize,
    pub sigma_x_sha256: String,
    pub distortions_sha256: String,
}

fn hash_matrices<'a>(ms: impl Iterator<Item = &'a SymMatrix>) -> String {
    let mut h = Sha256::new();
    for a in ms {
        h.update((a.dim() as u64).to_le_bytes());
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                h.update(a.get(i, j).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

impl InstanceDigest {
    pub fn of(inst: &ProblemInstance) -> Self {
        InstanceDigest {
            m: inst.m,
            levels: inst.levels,
            descriptions: inst.descriptions(),
            sigma_x_sha256: hash_matrices(std::iter::once(&inst.sigma_x)),
            distortions_sha256: hash_matrices(inst.distortions.values().iter()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Padding {
    /// Padded leaf position of each original description, keyed by description.
    pub relabel: std::collections::BTreeMap<String, usize>,
    pub original_descriptions: usize,
    /// Nodes added by padding (`D = Σ_X`).
    pub dummy_nodes: Vec<String>,
}

impl Padding {
    pub fn of(p: &PaddedInstance) -> Self {
        Padding {
            relabel: p.relabel.iter().enumerate().take(p.original_descriptions).map(|(j, &pos)| ((j + 1).to_string(), pos)).collect(),
            original_descriptions: p.original_descriptions,
            dummy_nodes: p.origin.iter().filter(|(_, o)| o.is_none()).map(|(n, _)| format!("{},{}", n.k, n.i)).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StructureResiduals {
    pub lambda_min_eigs: NodeMap<f64>,
    pub h_sum_residual: f64,
    pub h_lambda_residual: f64,
    pub gamma_inverse_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct DistortionEntry {
    pub node: String,
    pub achieved: SymMatrix,
    pub required: SymMatrix,
    pub path_gap: f64,
    pub satisfied: bool,
}

#[derive(Debug, Serialize)]
pub struct SolverSummary {
    pub converged: bool,
    pub polished: bool,
    pub best_seed: u64,
    pub iterations: usize,
    pub starts: Vec<StartSummary>,
}

#[derive(Debug, Serialize)]
pub struct WallTimes {
    pub pipeline_ms: f64,
    pub monte_carlo_ms: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RateReport {
    pub instance: InstanceDigest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    pub certificate_status: CertificateStatus,
    pub reasons: Vec<&'static str>,
    pub value_nats: f64,
    pub value_bits: f64,
    pub display_unit: &'static str,
    pub display_value: f64,
    /// Value on the instance the construction certifies (`D - ε I` on boundary instances).
    pub certified_value_nats: f64,
    pub epsilon_used: Option<f64>,
    pub epsilon_sequence: Vec<EpsilonStep>,
    pub solver: SolverSummary,
    pub theta_star: NodeMap<SymMatrix>,
    pub multipliers: NodeMap<SymMatrix>,
    pub sig_tilde: Option<NodeMap<SymMatrix>>,
    pub kkt_residuals: KktResiduals,
    pub kkt_max: f64,
    pub enhancement_residuals: Option<EnhancementResiduals>,
    pub sum_rate_enhanced: Option<f64>,
    pub structure: Option<StructureResiduals>,
    pub q_tree: Option<QTreeResiduals>,
    pub achievable_rate: Option<AchievableRate>,
    pub distortions: Vec<DistortionEntry>,
    pub failure: Option<String>,
    pub retried: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_times: Option<WallTimes>,
}

impl RateReport {
    pub fn new(inst: &ProblemInstance, padding: Option<&PaddedInstance>, c: &Certificate, bits: bool) -> Self {
        let ln2 = std::f64::consts::LN_2;
        let rep = &c.report;
        let structure = c.scheme.as_ref().map(|sc| StructureResiduals {
            lambda_min_eigs: sc.nodes.map(|_, s| s.lambda_min_eig),
            h_sum_residual: sc.max_h_sum_residual(),
            h_lambda_residual: sc.max_h_lambda_residual(),
            gamma_inverse_residual: sc.max_gamma_inverse_residual(),
        });
        RateReport {
            instance: InstanceDigest::of(inst),
            padding: padding.map(Padding::of),
            certificate_status: c.status,
            reasons: c.reasons.clone(),
            value_nats: c.value_nats,
            value_bits: c.value_nats / ln2,
            display_unit: if bits { "bits" } else { "nats" },
            display_value: if bits { c.value_nats / ln2 } else { c.value_nats },
            certified_value_nats: c.certified_value(),
            epsilon_used: c.epsilon_used,
            epsilon_sequence: c.epsilon_sequence.clone(),
            solver: SolverSummary {
                converged: c.converged,
                polished: rep.polished,
                best_seed: rep.best_seed,
                iterations: rep.iterations,
                starts: rep.starts.clone(),
            },
            theta_star: rep.theta.clone(),
            multipliers: rep.multipliers.clone(),
            sig_tilde: c.enhanced.as_ref().map(|e| e.sig_tilde.clone()),
            kkt_max: rep.kkt.max(),
            kkt_residuals: rep.kkt.clone(),
            enhancement_residuals: c.enhancement.clone(),
            sum_rate_enhanced: c.sum_rate_enhanced,
            structure,
            q_tree: c.q_tree.clone(),
            achievable_rate: c.achievable,
            distortions: c
                .distortions
                .iter()
                .map(|r| DistortionEntry {
                    node: format!("{},{}", r.node.k, r.node.i),
                    achieved: r.achieved.clone(),
                    required: r.required.clone(),
                    path_gap: r.path_gap,
                    satisfied: r.satisfied,
                })
                .collect(),
            failure: c.failure.as_ref().map(|e| e.to_string()),
            retried: c.retried,
            mc: None,
            wall_times: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status        {}", self.certificate_status.label());
        let _ = writeln!(s, "instance      m={} L={} M={}", self.instance.m, self.instance.levels, self.instance.descriptions);
        let _ = writeln!(s, "sum rate      {:.9} {}", self.display_value, self.display_unit);
        if let Some(e) = self.epsilon_used {
            let _ = writeln!(s, "epsilon       {e:e} (certified value {:.9} nats)", self.certified_value_nats);
        }
        let _ = writeln!(s, "kkt max       {:.3e}", self.kkt_max);
        if let Some(e) = &self.enhancement_residuals {
            let _ = writeln!(s, "enhancement   {:.3e}", e.max());
        }
        if let Some(a) = &self.achievable_rate {
            let _ = writeln!(s, "achievable    {:.9} nats (telescoped {:.9})", a.direct, a.telescoped);
        }
        if !self.distortions.is_empty() {
            let _ = writeln!(s, "node   satisfied   trace(achieved)   trace(required)");
            for d in &self.distortions {
                let _ = writeln!(
                    s,
                    "{:<6} {:<11} {:<17.9} {:.9}",
                    d.node,
                    if d.satisfied { "yes" } else { "no" },
                    d.achieved.trace(),
                    d.required.trace()
                );
            }
        }
        if let Some(mc) = &self.mc {
            let _ = writeln!(
                s,
                "monte carlo   N={} seed={} u_cov {:.3e} (bound {:.3e}) cross max {:.3e} {}",
                mc.n_samples,
                mc.seed,
                mc.u_cov.deviation,
                mc.u_cov.bound,
                mc.max_cross_moment(),
                if mc.passed() { "pass" } else { "fail" }
            );
        }
        for r in &self.reasons {
            let _ = writeln!(s, "reason        {r}");
        }
        s
    }
}
