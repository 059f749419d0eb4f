//! Command-line surface: solve, curvature, check, verify, estimate, selftest.
//!
//! Exit codes: 0 success, 1 input error, 2 precondition failure,
//! 3 non-convergence (or a failed verification), 4 indeterminate,
//! 5 self-test failure. Each command prints a run manifest to stderr so that
//! the files it writes stay byte-identical across repeated runs.

mod selftest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::asymptotics::{coarser, ratio_sweep, sweep_row, DiagonalSpec, SweepReport, SweepRow};
use crate::bodies::StarBody;
use crate::dual_measures::{dual_curvature_measure, DiscreteMeasure};
use crate::error::{invalid, GdmpError, Result};
use crate::io::{self, ConfigDoc, MeasureDoc, PolytopeDoc, PreconditionDoc, RunManifest, SolveReportDoc, StarBodyDoc, VerifyDoc};
use crate::measure_checks::{check_preconditions, CheckOptions, Verdict};
use crate::solver::{minimize_on_grid, verify_solution, SolveConfig, SolveStatus};
use crate::sphere_quad::{GridDescriptor, GridKind, SphereGrid};

pub use selftest::{run_selftest, Fault, SelftestReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INDETERMINATE: i32 = 4;
pub const EXIT_SELFTEST: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "gdmp", version, about = "Solver and verification lab for the generalized dual Minkowski problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for a polytope whose dual curvature measure is the given measure.
    Solve(SolveArgs),
    /// Compute the dual curvature measure of a polytope.
    Curvature(CurvatureArgs),
    /// Check the existence preconditions of a measure.
    Check(CheckArgs),
    /// Compare a polytope's dual curvature measure with a target measure.
    Verify(VerifyArgs),
    /// Integral of |Ax|^-alpha against its closed-form estimate.
    Estimate(EstimateArgs),
    /// Run the invariant suite at reduced resolution.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct GridArgs {
    #[arg(long)]
    grid_resolution: Option<usize>,
    #[arg(long, value_parser = parse_grid_kind)]
    grid_kind: Option<GridKind>,
    /// Seed for Monte Carlo grids and randomized steps.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_grid_kind(s: &str) -> std::result::Result<GridKind, String> {
    s.parse().map_err(|e: GdmpError| e.to_string())
}

impl GridArgs {
    fn descriptor(&self, dim: usize) -> GridDescriptor {
        let defaults = SolveConfig::default();
        let cfg = SolveConfig {
            grid_resolution: self.grid_resolution.unwrap_or(defaults.grid_resolution),
            grid_kind: self.grid_kind.unwrap_or(defaults.grid_kind),
            seed: self.seed.unwrap_or(defaults.seed),
            ..defaults
        };
        cfg.grid_descriptor(dim)
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long)]
    star: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    q: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Run even when the preconditions fail or q >= n.
    #[arg(long)]
    override_regime: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CurvatureArgs {
    #[arg(long)]
    body: PathBuf,
    #[arg(long)]
    star: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    q: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    q: f64,
    #[arg(long)]
    star: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    body: PathBuf,
    #[arg(long)]
    measure: PathBuf,
    #[arg(long)]
    star: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    q: f64,
    /// Largest accepted residual.
    #[arg(long, default_value_t = 2e-2)]
    bound: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    alpha: f64,
    /// Diagonal entries of A, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    diag: Vec<f64>,
    /// Condition numbers of an additional seeded sweep.
    #[arg(long, value_delimiter = ',')]
    spreads: Vec<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    WeightSum,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Corrupt one ingredient on purpose; the suite must then fail.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

struct Outcome {
    code: i32,
    inputs: Vec<String>,
    config_digest: String,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let name = match &cli.command {
        Command::Solve(_) => "solve",
        Command::Curvature(_) => "curvature",
        Command::Check(_) => "check",
        Command::Verify(_) => "verify",
        Command::Estimate(_) => "estimate",
        Command::Selftest(_) => "selftest",
    };
    let start = Instant::now();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Curvature(a) => cmd_curvature(a),
        Command::Check(a) => cmd_check(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(out) => {
            let manifest = RunManifest {
                schema: io::MANIFEST_SCHEMA.into(),
                command: name.into(),
                inputs: out.inputs,
                config_digest: out.config_digest,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            if let Ok(bytes) = io::canonical_bytes(&manifest) {
                eprintln!("{}", String::from_utf8_lossy(&bytes));
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                GdmpError::SubsetBudget { .. } => EXIT_INDETERMINATE,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| GdmpError::Io {
        path: path_string(dir),
        source,
    })
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    io::read_document::<MeasureDoc>(path)?
        .into_measure()
        .map_err(|e| invalid(format!("{}: {e}", path_string(path))))
}

fn read_star(path: &Path, dim: usize) -> Result<StarBody> {
    let doc: StarBodyDoc = io::read_document(path)?;
    if doc.dim != dim {
        return Err(invalid(format!("{}: dim {} does not match dim {dim}", path_string(path), doc.dim)));
    }
    doc.into_body().map_err(|e| invalid(format!("{}: {e}", path_string(path))))
}

fn build_grid(desc: &GridDescriptor) -> Result<SphereGrid> {
    desc.build()
}

fn args_digest<T: Serialize>(value: &T) -> Result<String> {
    io::digest(value)
}

fn cmd_solve(a: SolveArgs) -> Result<Outcome> {
    let mu = read_measure(&a.measure)?;
    let n = mu.dim();
    let q_body = read_star(&a.star, n)?;
    let mut inputs = vec![path_string(&a.measure), path_string(&a.star)];
    let mut cfg = match &a.config {
        Some(p) => {
            inputs.push(path_string(p));
            let (dim, cfg) = io::read_document::<ConfigDoc>(p)?
                .into_config()
                .map_err(|e| invalid(format!("{}: {e}", path_string(p))))?;
            if dim != n {
                return Err(invalid(format!("{}: dim {dim} does not match the measure's {n}", path_string(p))));
            }
            cfg
        }
        None => SolveConfig::default(),
    };
    if let Some(q) = a.q {
        cfg.q = q;
    }
    if let Some(r) = a.grid.grid_resolution {
        cfg.grid_resolution = r;
    }
    if let Some(k) = a.grid.grid_kind {
        cfg.grid_kind = k;
    }
    if let Some(s) = a.grid.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.tolerance {
        cfg.tolerance = t;
    }
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    cfg.override_regime |= a.override_regime;
    cfg.validate()?;
    let config_doc = ConfigDoc::new(n, cfg.clone());
    let config_digest = io::digest(&config_doc)?;

    let grid = build_grid(&cfg.grid_descriptor(n))?;
    let report = minimize_on_grid(&mu, &q_body, &cfg, &grid)?;
    out_dir(&a.out_dir)?;
    if let Some(k) = report.polytope(&mu)? {
        io::write_document(&a.out_dir.join("solution.json"), &PolytopeDoc::from_polytope(&k))?;
    }
    io::write_bytes(&a.out_dir.join("trace.csv"), report.trace.to_csv().as_bytes())?;
    let doc = SolveReportDoc {
        schema: io::SOLVE_REPORT_SCHEMA.into(),
        dim: n,
        config: cfg,
        report,
    };
    io::write_document(&a.out_dir.join("report.json"), &doc)?;

    let report = &doc.report;
    let code = match report.status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::RefusedPreconditions => EXIT_PRECONDITION,
        SolveStatus::MaxIter => EXIT_NOT_CONVERGED,
    };
    println!("status: {:?}", report.status);
    if report.status == SolveStatus::RefusedPreconditions {
        for f in &report.preconditions.failures {
            println!("precondition: {f}");
        }
        for note in &report.preconditions.notes {
            println!("note: {note}");
        }
    } else {
        if let Some(r) = &report.residual {
            println!("residual: {:.6e}", r.residual);
        }
        println!("stop: {:?} after {} iterations", report.stop_reason, report.iterations);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(Outcome {
        code,
        inputs,
        config_digest,
    })
}

fn cmd_curvature(a: CurvatureArgs) -> Result<Outcome> {
    let k = io::read_document::<PolytopeDoc>(&a.body)?
        .into_polytope()
        .map_err(|e| invalid(format!("{}: {e}", path_string(&a.body))))?;
    let n = k.dim();
    let q_body = read_star(&a.star, n)?;
    let desc = a.grid.descriptor(n);
    let grid = build_grid(&desc)?;
    let mu = dual_curvature_measure(&k, &q_body, a.q, &grid)?;
    out_dir(&a.out_dir)?;
    io::write_document(&a.out_dir.join("measure.json"), &MeasureDoc::from_measure(&mu))?;
    println!("atoms: {}", mu.len());
    println!("total: {:.16e}", mu.total());
    let zero = mu.zero_atoms();
    if !zero.is_empty() {
        println!("inactive facets: {zero:?}");
    }
    Ok(Outcome {
        code: EXIT_OK,
        inputs: vec![path_string(&a.body), path_string(&a.star)],
        config_digest: args_digest(&json!({"q": a.q, "grid": desc}))?,
    })
}

fn cmd_check(a: CheckArgs) -> Result<Outcome> {
    let mu = read_measure(&a.measure)?;
    let n = mu.dim();
    let mut inputs = vec![path_string(&a.measure)];
    let q_body = match &a.star {
        Some(p) => {
            inputs.push(path_string(p));
            Some(read_star(p, n)?)
        }
        None => None,
    };
    let desc = a.grid.descriptor(n);
    let grid = build_grid(&desc)?;
    let report = check_preconditions(&mu, q_body.as_ref(), a.q, Some(&grid), &CheckOptions::default())?;
    out_dir(&a.out_dir)?;
    let doc = PreconditionDoc {
        schema: io::PRECONDITION_SCHEMA.into(),
        dim: n,
        report,
    };
    io::write_document(&a.out_dir.join("preconditions.json"), &doc)?;
    let report = &doc.report;
    println!("verdict: {:?}", report.verdict);
    for f in &report.failures {
        println!("failure: {f}");
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    let code = match report.verdict {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_PRECONDITION,
        Verdict::Indeterminate => EXIT_INDETERMINATE,
    };
    Ok(Outcome {
        code,
        inputs,
        config_digest: args_digest(&json!({"q": a.q, "grid": desc}))?,
    })
}

fn cmd_verify(a: VerifyArgs) -> Result<Outcome> {
    let k = io::read_document::<PolytopeDoc>(&a.body)?
        .into_polytope()
        .map_err(|e| invalid(format!("{}: {e}", path_string(&a.body))))?;
    let mu = read_measure(&a.measure)?;
    let n = mu.dim();
    let q_body = read_star(&a.star, n)?;
    let desc = a.grid.descriptor(n);
    let grid = build_grid(&desc)?;
    let report = verify_solution(&k, &q_body, a.q, &mu, &grid)?;
    let pass = report.residual <= a.bound;
    out_dir(&a.out_dir)?;
    let doc = VerifyDoc {
        schema: io::VERIFY_SCHEMA.into(),
        dim: n,
        q: a.q,
        bound: a.bound,
        pass,
        report,
    };
    io::write_document(&a.out_dir.join("verify.json"), &doc)?;
    println!("residual: {:.6e} (bound {:.1e})", doc.report.residual, a.bound);
    Ok(Outcome {
        code: if pass { EXIT_OK } else { EXIT_NOT_CONVERGED },
        inputs: vec![path_string(&a.body), path_string(&a.measure), path_string(&a.star)],
        config_digest: args_digest(&json!({"q": a.q, "bound": a.bound, "grid": desc}))?,
    })
}

#[derive(Serialize)]
struct EstimateDoc {
    schema: &'static str,
    dim: usize,
    row: SweepRow,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepReport>,
}

const ESTIMATE_CSV_HEADER: &str = "alpha,m,spread,entries,integral,estimate,ratio,case,route,quad_error";

/// Snake-case name of a unit enum variant, as serialized.
fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn csv_row(r: &SweepRow) -> String {
    let entries: Vec<String> = r.entries.iter().map(|e| format!("{e:.16e}")).collect();
    format!(
        "{:.16e},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
        r.alpha,
        r.m,
        r.spread,
        entries.join(";"),
        r.integral,
        r.estimate,
        r.ratio,
        tag(&r.case),
        tag(&r.route),
        r.quad_error
    )
}

fn cmd_estimate(a: EstimateArgs) -> Result<Outcome> {
    let diag = DiagonalSpec::from_unsorted(a.diag.clone())?;
    let m = diag.m();
    let desc = a.grid.descriptor(m);
    let grid = build_grid(&desc)?;
    let coarse = coarser(&grid)?;
    let row = sweep_row(&diag, a.alpha, &grid, &coarse)?;
    let seed = a.grid.seed.unwrap_or(0);
    let sweep = if a.spreads.is_empty() {
        None
    } else {
        Some(ratio_sweep(a.alpha, m, &a.spreads, &grid, seed)?)
    };
    out_dir(&a.out_dir)?;
    let mut csv = String::from(ESTIMATE_CSV_HEADER);
    csv.push('\n');
    for r in std::iter::once(&row).chain(sweep.iter().flat_map(|s| s.rows.iter())) {
        csv.push_str(&csv_row(r));
        csv.push('\n');
    }
    io::write_bytes(&a.out_dir.join("estimate.csv"), csv.as_bytes())?;
    let doc = EstimateDoc {
        schema: "gdmp.estimate_report/1",
        dim: m,
        row,
        sweep,
    };
    io::write_document(&a.out_dir.join("estimate.json"), &doc)?;
    println!("ratio: {:.6e} ({:?})", doc.row.ratio, doc.row.case);
    if let Some(s) = &doc.sweep {
        println!("sweep band: {:.6e} (ratios {:.6e} .. {:.6e})", s.band, s.min_ratio, s.max_ratio);
    }
    Ok(Outcome {
        code: EXIT_OK,
        inputs: Vec::new(),
        config_digest: args_digest(&json!({"alpha": a.alpha, "diag": a.diag, "spreads": a.spreads, "seed": seed, "grid": desc}))?,
    })
}

fn cmd_selftest(a: SelftestArgs) -> Result<Outcome> {
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::WeightSum => Fault::WeightSum,
    });
    let report = run_selftest(fault);
    for c in &report.checks {
        match &c.failure {
            None => println!("pass {}", c.name),
            Some(why) => println!("FAIL {}: {why}", c.name),
        }
    }
    let code = match report.first_failure() {
        None => {
            println!("selftest passed ({} invariants)", report.checks.len());
            EXIT_OK
        }
        Some(name) => {
            println!("selftest failed: {name}");
            EXIT_SELFTEST
        }
    };
    Ok(Outcome {
        code,
        inputs: Vec::new(),
        config_digest: args_digest(&json!({"inject_fault": fault.map(|f| f.name())}))?,
    })
}
