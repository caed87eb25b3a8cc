//! Command implementations for the `mdtree` binary.
//!
//! Each command returns a JSON document and an exit code: 0 when the result is
//! certified, 1 when it was computed but not certified, 2 on input errors.

pub mod input;
pub mod report;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use mdtree_core::certificate::{certify, Certificate, CertificateStatus, CertifyOptions};
use mdtree_core::oracle::{scalar_grid_max, GridSpec};
use mdtree_core::scheme::monte_carlo_check;
use mdtree_core::Tolerance;
use serde_json::{json, Value};

use crate::report::{RateReport, WallTimes};

pub const EXIT_VERIFIED: i32 = 0;
pub const EXIT_UNVERIFIED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Io(std::io::Error),
    Input { kind: &'static str, message: String },
    Core(mdtree_core::Error),
}

impl CliError {
    pub fn input(kind: &'static str, message: String) -> Self {
        CliError::Input { kind, message }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "Io",
            CliError::Input { kind, .. } => kind,
            CliError::Core(e) => e.kind(),
        }
    }

    /// Diagnostic document printed on stdout.
    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Input { message, .. } => f.write_str(message),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mdtree_core::Error> for CliError {
    fn from(e: mdtree_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Flags shared by `solve` and `verify`.
#[derive(Clone, Debug, Default)]
pub struct SolveFlags {
    pub bits: bool,
    pub eps: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub psd_eps: Option<f64>,
    pub eq_eps: Option<f64>,
    pub grad_tol: Option<f64>,
    /// Omit `wall_times` so that repeated runs are byte-identical.
    pub no_timing: bool,
}

impl SolveFlags {
    fn tolerance(&self) -> Result<Tolerance, CliError> {
        let d = Tolerance::default();
        Ok(Tolerance::new(self.psd_eps.unwrap_or(d.psd_eps), self.eq_eps.unwrap_or(d.eq_eps))?)
    }
}

/// Output of a command: the document to print and the process exit code.
#[derive(Debug)]
pub struct Outcome {
    pub document: Value,
    pub text: Option<String>,
    pub exit_code: i32,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(CliError::Io)
}

struct Run {
    cert: Certificate,
    report: RateReport,
    tol: Tolerance,
}

fn run_pipeline(path: &Path, flags: &SolveFlags) -> Result<Run, CliError> {
    let tol = flags.tolerance()?;
    let loaded = input::parse(&read(path)?, &tol)?;
    let mut opts = CertifyOptions { tol, solver: loaded.solver.clone(), ..CertifyOptions::default() };
    if let Some(s) = &flags.seeds {
        if s.is_empty() {
            return Err(CliError::input("InvalidFlag", "--seeds needs at least one seed".into()));
        }
        opts.solver.seeds = s.clone();
    }
    if let Some(g) = flags.grad_tol {
        opts.solver.grad_tol = g;
    }
    if let Some(e) = flags.eps {
        if !(e.is_finite() && e > 0.0) {
            return Err(CliError::Core(mdtree_core::Error::NegativeEpsilon));
        }
        opts.eps = Some(e);
    }
    opts.solver.check()?;
    let start = Instant::now();
    let cert = certify(&loaded.instance, &opts)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let mut report = RateReport::new(&loaded.instance, loaded.padding.as_ref(), &cert, flags.bits);
    if !flags.no_timing {
        report.wall_times = Some(WallTimes { pipeline_ms: elapsed, monte_carlo_ms: None });
    }
    Ok(Run { cert, report, tol })
}

fn finish(rep: &RateReport, ok: bool, text: bool) -> Outcome {
    Outcome {
        document: serde_json::to_value(rep).expect("report serializes"),
        text: text.then(|| rep.to_text()),
        exit_code: if ok { EXIT_VERIFIED } else { EXIT_UNVERIFIED },
    }
}

pub fn cmd_solve(path: &Path, flags: &SolveFlags, text: bool) -> Result<Outcome, CliError> {
    let run = run_pipeline(path, flags)?;
    let ok = run.report.certificate_status == CertificateStatus::Verified;
    Ok(finish(&run.report, ok, text))
}

/// `solve` followed by a Monte Carlo check of the constructed test channel.
pub fn cmd_verify(path: &Path, flags: &SolveFlags, n_samples: usize, seed: u64, text: bool) -> Result<Outcome, CliError> {
    if n_samples == 0 {
        return Err(CliError::Core(mdtree_core::Error::InvalidSampleCount));
    }
    let mut run = run_pipeline(path, flags)?;
    let c = &run.cert;
    let mut mc_ok = false;
    if let (Some(es), Some(sc)) = (&c.enhanced, &c.scheme) {
        let start = Instant::now();
        match monte_carlo_check(&c.certified_instance, &c.report.theta, es, sc, n_samples, seed, &run.tol) {
            Ok(mc) => {
                mc_ok = mc.passed();
                run.report.mc = Some(mc);
            }
            Err(e) => log::error!("monte carlo check failed: {e}"),
        }
        if let Some(w) = run.report.wall_times.as_mut() {
            w.monte_carlo_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    let ok = mc_ok && run.report.certificate_status == CertificateStatus::Verified;
    Ok(finish(&run.report, ok, text))
}

/// Exhaustive grid maximum for scalar instances.
pub fn cmd_oracle(path: &Path, resolution: f64, flags: &SolveFlags) -> Result<Outcome, CliError> {
    let tol = flags.tolerance()?;
    let loaded = input::parse(&read(path)?, &tol)?;
    let grid = GridSpec::new(resolution)?;
    let r = scalar_grid_max(&loaded.instance, grid)?;
    let document = json!({
        "instance": report::InstanceDigest::of(&loaded.instance),
        "resolution": resolution,
        "grid_points": r.grid_points,
        "value_nats": r.value,
        "value_bits": r.value / std::f64::consts::LN_2,
        "theta": r.theta.map(|_, t| t.get(0, 0)),
    });
    Ok(Outcome { document, text: None, exit_code: EXIT_VERIFIED })
}

/// Padded perfect-tree instance for a general description tree.
pub fn cmd_pad(path: &Path, flags: &SolveFlags) -> Result<Outcome, CliError> {
    let tol = flags.tolerance()?;
    let loaded = input::parse(&read(path)?, &tol)?;
    let mut document = json!({ "instance": input::instance_json(&loaded.instance) });
    if let Some(p) = &loaded.padding {
        document["padding"] = serde_json::to_value(report::Padding::of(p)).expect("padding serializes");
    }
    Ok(Outcome { document, text: None, exit_code: EXIT_VERIFIED })
}
