//! `scdstab`: analyze, solve and probe stability of composite KKT systems
//! described by JSON problem files.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid problem file, 3 the
//! analytic routes disagree, 4 the solver or a probe failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scd_stability::analyzer::{self, AnalyzerError, Verdict};
use scd_stability::harness::{self, HarnessError, H_LADDER};
use scd_stability::problem::{ProblemError, ProblemInstance};
use scd_stability::report::{ProbeSection, ReportDocument};
use scd_stability::solver::{self, SolveOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;
const EXIT_FAILED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "scdstab", version, about = "Lipschitzian stability of composite KKT systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Problem file (JSON).
    problem: PathBuf,
    /// Also write the report as JSON to this path.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every analytic criterion at the reference point.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the KKT system for a perturbation (a*, b).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Tilt a*, comma separated (default zero).
        #[arg(long = "a-star", value_name = "V", value_parser = parse_vec, allow_hyphen_values = true)]
        a_star: Option<VecArg>,
        /// Shift b, comma separated (default zero).
        #[arg(long, value_name = "V", value_parser = parse_vec, allow_hyphen_values = true)]
        b: Option<VecArg>,
        /// Start (x0, y0*) as n + m comma-separated values (default: reference pair).
        #[arg(long, value_name = "V", value_parser = parse_vec, allow_hyphen_values = true)]
        start: Option<VecArg>,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Sample perturbations and look for evidence against the verdicts.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Radius of the localization used by the full-stability probe.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Validate the localization derivative by finite differences.
        #[arg(long)]
        check_derivative: bool,
    },
}

/// Comma-separated vector flag value.
#[derive(Debug, Clone)]
struct VecArg(Vec<f64>);

fn parse_vec(s: &str) -> Result<VecArg, String> {
    if s.trim().is_empty() {
        return Ok(VecArg(Vec::new()));
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("'{t}' is not a finite number"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(VecArg)
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure { code, msg: msg.into() }
    }
}

impl From<ProblemError> for Failure {
    fn from(e: ProblemError) -> Self {
        Failure::new(EXIT_INVALID, e.to_string())
    }
}

impl From<AnalyzerError> for Failure {
    fn from(e: AnalyzerError) -> Self {
        match e {
            AnalyzerError::Inconsistent {
                property,
                message,
                certificates,
            } => {
                let mut msg = format!("inconsistent routes for {property}: {message}");
                for c in certificates {
                    msg.push_str(&format!("\n  {}: {:?}", c.detail, c.vector));
                }
                Failure::new(EXIT_INCONSISTENT, msg)
            }
            AnalyzerError::Problem(p) => p.into(),
            other => Failure::new(EXIT_FAILED, other.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Analyzer(a) => a.into(),
            HarnessError::InvalidArgument(m) => Failure::new(EXIT_USAGE, m),
            other => Failure::new(EXIT_FAILED, other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ProblemInstance, Failure> {
    ProblemInstance::from_path(path).map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", path.display())))
}

fn emit(doc: &ReportDocument, json: Option<&Path>) -> Result<(), Failure> {
    print!("{}", doc.render_text());
    if let Some(p) = json {
        std::fs::write(p, doc.to_json() + "\n")
            .map_err(|e| Failure::new(EXIT_FAILED, format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn vector_arg(v: Option<VecArg>, len: usize, flag: &str) -> Result<nalgebra::DVector<f64>, Failure> {
    match v.map(|a| a.0) {
        None => Ok(nalgebra::DVector::zeros(len)),
        Some(v) if v.len() == len => Ok(nalgebra::DVector::from_vec(v)),
        Some(v) => Err(Failure::new(
            EXIT_USAGE,
            format!("--{flag} has {} entries, expected {len}", v.len()),
        )),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { common } => {
            let inst = load(&common.problem)?;
            let rep = analyzer::analyze(&inst)?;
            emit(&ReportDocument::from_analysis(&rep, None), common.json.as_deref())
        }
        Command::Solve {
            common,
            a_star,
            b,
            start,
            max_iter,
            tol,
        } => {
            let inst = load(&common.problem)?;
            let (n, m) = (inst.n(), inst.m());
            let astar = vector_arg(a_star, n, "a-star")?;
            let b = vector_arg(b, m, "b")?;
            let (x0, y0) = match start.map(|a| a.0) {
                None => (inst.xbar().clone(), inst.ybar_star().clone()),
                Some(s) if s.len() == n + m => (
                    nalgebra::DVector::from_column_slice(&s[..n]),
                    nalgebra::DVector::from_column_slice(&s[n..]),
                ),
                Some(s) => {
                    return Err(Failure::new(
                        EXIT_USAGE,
                        format!("--start has {} entries, expected n + m = {}", s.len(), n + m),
                    ))
                }
            };
            if !(tol.is_finite() && tol > 0.0) {
                return Err(Failure::new(EXIT_USAGE, "--tol must be positive"));
            }
            let opts = SolveOptions {
                max_iter,
                tol,
                damping: true,
            };
            let sol = solver::solve_perturbed(&inst, &astar, &b, (&x0, &y0), &opts)
                .map_err(|e| Failure::new(EXIT_FAILED, format!("solver: {e}")))?;
            let mut doc = ReportDocument::empty(None);
            doc.solution = Some(sol);
            emit(&doc, common.json.as_deref())
        }
        Command::Probe {
            common,
            radius,
            samples,
            seed,
            delta,
            check_derivative,
        } => {
            let inst = load(&common.problem)?;
            let rep = analyzer::analyze(&inst)?;
            let mut doc = ReportDocument::from_analysis(&rep, Some(seed));
            let mut probe = ProbeSection::default();
            if samples >= 2 {
                probe.lipschitz = Some(harness::estimate_lipschitz(&inst, radius, samples, seed)?);
            } else {
                doc.notes.push("Lipschitz estimate skipped: fewer than 2 samples".into());
            }
            probe.multipliers = Some(harness::probe_multiplier_uniqueness(&inst, radius, samples, seed)?);
            probe.full_stability = Some(harness::check_full_stability(&inst, delta, radius, samples, seed)?);
            if check_derivative {
                if rep.localization_jacobian.is_some() {
                    probe.derivative = Some(harness::verify_localization_derivative(&inst, &H_LADDER, None)?);
                } else {
                    doc.notes.push("derivative check skipped: no localization derivative".into());
                }
            }
            doc.notes.extend(refutations(&doc, &probe));
            doc.probe = Some(probe);
            emit(&doc, common.json.as_deref())
        }
    }
}

/// Sampling evidence that contradicts a "yes" verdict. Probes never
/// upgrade a verdict.
fn refutations(doc: &ReportDocument, probe: &ProbeSection) -> Vec<String> {
    let yes = |k: &str| doc.verdicts.get(k) == Some(&Verdict::Yes);
    let mut out = Vec::new();
    if let Some(f) = &probe.full_stability {
        if !f.violations.is_empty() {
            for k in ["sll", "full_stability"] {
                if yes(k) {
                    out.push(format!(
                        "probe refutes {k} = yes: {} perturbations with two KKT pairs in the localization",
                        f.violations.len()
                    ));
                }
            }
        }
    }
    if let Some(m) = &probe.multipliers {
        if m.non_unique > 0 && yes("soqc") {
            out.push(format!(
                "probe found {} non-unique multiplier sets although soqc = yes",
                m.non_unique
            ));
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(t) = std::env::var("STAB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if t > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
