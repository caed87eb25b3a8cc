use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdtree::{cmd_oracle, cmd_pad, cmd_solve, cmd_verify, CliError, Outcome, SolveFlags, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "mdtree", version, about = "Sum-rate optimization and certificates for tree-structured Gaussian multiple description coding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Eigenvalue slack for PSD tests.
    #[arg(long)]
    psd_eps: Option<f64>,
    /// Absolute tolerance for equality tests.
    #[arg(long)]
    eq_eps: Option<f64>,
}

#[derive(Args)]
struct Pipeline {
    /// Instance file.
    file: PathBuf,
    /// Display rates in bits. Stored values stay in nats.
    #[arg(long)]
    bits: bool,
    /// Use this ε for the boundary shrink instead of the schedule.
    #[arg(long)]
    eps: Option<f64>,
    /// Multistart seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Print a summary table instead of JSON.
    #[arg(long)]
    text: bool,
    /// Inner gradient tolerance of the solver.
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Omit wall-clock timings from the report.
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    common: Common,
}

impl Pipeline {
    fn flags(&self) -> SolveFlags {
        SolveFlags {
            bits: self.bits,
            eps: self.eps,
            seeds: self.seeds.clone(),
            psd_eps: self.common.psd_eps,
            eq_eps: self.common.eq_eps,
            grad_tol: self.grad_tol,
            no_timing: self.no_timing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve and certify an instance.
    Solve(Pipeline),
    /// Solve, certify and check the scheme by simulation.
    Verify {
        #[command(flatten)]
        pipeline: Pipeline,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid maximum for a scalar instance.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        resolution: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Pad a general description tree to a perfect binary tree.
    Pad {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn common_flags(c: &Common) -> SolveFlags {
    SolveFlags { psd_eps: c.psd_eps, eq_eps: c.eq_eps, ..SolveFlags::default() }
}

fn emit(out: Result<Outcome, CliError>) -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    let code = match out {
        Ok(o) => {
            let body = match o.text {
                Some(t) => t,
                None => serde_json::to_string_pretty(&o.document).expect("document serializes") + "\n",
            };
            let _ = stdout.write_all(body.as_bytes());
            o.exit_code
        }
        Err(e) => {
            log::error!("{e}");
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&e.to_json()).expect("error serializes"));
            EXIT_INPUT
        }
    };
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDTREE_LOG", "error")).init();
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Solve(p) => cmd_solve(&p.file, &p.flags(), p.text),
        Command::Verify { pipeline: p, mc_samples, seed } => cmd_verify(&p.file, &p.flags(), *mc_samples, *seed, p.text),
        Command::Oracle { file, resolution, common } => cmd_oracle(file, *resolution, &common_flags(common)),
        Command::Pad { file, common } => cmd_pad(file, &common_flags(common)),
    };
    emit(out)
}
