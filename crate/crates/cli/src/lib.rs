//! Batch front end: `minimize`, `folds`, `sweep`, `recover` and `plot-g`.
//!
//! [`run`] parses arguments, merges an optional JSON config under the flags,
//! validates, dispatches and writes outputs. Exit codes: 0 success,
//! 2 validation error, 3 non-convergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dcone::folds::{self, Branch, FoldError};
use dcone::obstacle::{self, ConditionTolerances, Init, MinimizerReport, SolverConfig, SolverError};
use dcone::recovery::{self, RecoveryError, DEFAULT_H};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub mod config;

use config::{parse_list, sibling, FileConfig, Profile, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NoConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::NoConvergence(_) => EXIT_NO_CONVERGENCE,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidConfig(_) | SolverError::BadInit { .. } => CliError::Validation(e.to_string()),
            _ => CliError::NoConvergence(e.to_string()),
        }
    }
}

impl From<FoldError> for CliError {
    fn from(e: FoldError) -> Self {
        match e {
            FoldError::NoRoot(_) | FoldError::DegenerateDenominator { .. } | FoldError::ObstacleViolated { .. } => {
                CliError::NoConvergence(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RecoveryError> for CliError {
    fn from(e: RecoveryError) -> Self {
        match e {
            RecoveryError::NewtonStall(_)
            | RecoveryError::NewtonDiverged { .. }
            | RecoveryError::SingularJacobian { .. }
            | RecoveryError::ChartDegenerate => CliError::NoConvergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dcone", version, about = "Small-deflection d-cone limit problem")]
struct Cli {
    /// JSON file with settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize the limit energy from random and bump starts.
    Minimize(MinimizeArgs),
    /// Solve the single-fold problem and check the necessary conditions.
    Folds(FoldsArgs),
    /// Roots of g = k and single-fold energies over an (alpha, k) grid.
    Sweep(SweepArgs),
    /// Build recovery curves and compare rescaled energies with the limit.
    Recover(RecoverArgs),
    /// Sample g (trig) or g-tilde (hyperbolic) on (0, pi].
    PlotG(PlotArgs),
}

#[derive(Debug, Args)]
struct MinimizeArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the bump start.
    #[arg(long)]
    no_bump: bool,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `t,w` samples; defaults to `w.csv` next to the report.
    #[arg(long)]
    w_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FoldsArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Also run the minimizer from the bump start and check it.
    #[arg(long)]
    numeric: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// `a,b,c` or `start:stop:count`.
    #[arg(long, value_parser = parse_list_arg)]
    alpha: Option<List>,
    #[arg(long, value_parser = parse_list_arg, allow_hyphen_values = true)]
    k: Option<List>,
    #[arg(long, value_parser = parse_branch)]
    branch: Option<Branch>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_list_arg)]
    h: Option<List>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fitted exponents; defaults to `<out stem>.summary.json`.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_branch)]
    branch: Option<Branch>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Comma list or range; wrapped so clap treats it as one value.
#[derive(Debug, Clone)]
struct List(Vec<f64>);

fn parse_list_arg(s: &str) -> Result<List, String> {
    parse_list(s).map(List)
}

fn parse_branch(s: &str) -> Result<Branch, String> {
    match s {
        "trig" => Ok(Branch::Trig),
        "hyperbolic" | "hyp" => Ok(Branch::Hyperbolic),
        _ => Err(format!("unknown branch `{s}` (trig or hyperbolic)")),
    }
}

const DEFAULT_PLOT_SAMPLES: usize = 4000;
const DEFAULT_RECOVER_N: usize = 4096;
const DEFAULT_FOLDS_N: usize = 2048;

fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let f = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let need = |what: &str| CliError::Validation(format!("missing --{what}"));
    Ok(match cli.command {
        Command::Minimize(a) => {
            let mut solver = f.solver.clone().unwrap_or_default();
            solver.n = a.n.or(f.n).unwrap_or(solver.n);
            solver.restarts = a.restarts.or(f.restarts).unwrap_or(solver.restarts);
            solver.seed = a.seed.or(f.seed).unwrap_or(solver.seed);
            solver.include_bump = if a.no_bump { false } else { f.include_bump.unwrap_or(solver.include_bump) };
            let out = a.out.or(f.out).unwrap_or_else(|| "report.json".into());
            let w_out = a.w_out.or(f.w_out).unwrap_or_else(|| sibling(&out, "w.csv"));
            RunConfig::Minimize { solver, out, w_out }
        }
        Command::Folds(a) => RunConfig::Folds {
            n: a.n.or(f.n).unwrap_or(DEFAULT_FOLDS_N),
            numeric: a.numeric || f.numeric.unwrap_or(false),
            out: a.out.or(f.out).unwrap_or_else(|| "folds.json".into()),
        },
        Command::Sweep(a) => RunConfig::Sweep {
            alphas: a.alpha.map(|l| l.0).or(f.alphas).ok_or_else(|| need("alpha"))?,
            ks: a.k.map(|l| l.0).or(f.ks).unwrap_or_else(|| vec![0.0]),
            branch: a.branch.or(f.branch).unwrap_or(Branch::Trig),
            out: a.out.or(f.out).unwrap_or_else(|| "sweep.csv".into()),
        },
        Command::Recover(a) => {
            let out = a.out.or(f.out).unwrap_or_else(|| "gamma.csv".into());
            let summary_out = a.summary_out.or(f.summary_out).unwrap_or_else(|| {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("gamma");
                sibling(&out, &format!("{stem}.summary.json"))
            });
            RunConfig::Recover {
                profile: a.profile.or(f.profile).unwrap_or(Profile::SingleFold),
                n: a.n.or(f.n).unwrap_or(DEFAULT_RECOVER_N),
                h: a.h.map(|l| l.0).or(f.h).unwrap_or_else(|| DEFAULT_H.to_vec()),
                out,
                summary_out,
            }
        }
        Command::PlotG(a) => RunConfig::PlotG {
            alpha: a.alpha.or(f.alpha).ok_or_else(|| need("alpha"))?,
            branch: a.branch.or(f.branch).unwrap_or(Branch::Trig),
            samples: a.samples.or(f.samples).unwrap_or(DEFAULT_PLOT_SAMPLES),
            out: a.out.or(f.out).unwrap_or_else(|| "g.csv".into()),
        },
    })
}

/// Caps the rayon pool at `DCONE_THREADS` workers when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DCONE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("DCONE_THREADS must be a positive integer, got `{v}`")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one invocation and returns the process exit code. Diagnostics go to
/// standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("dcone: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = resolve(cli)?;
    cfg.validate()?;
    match &cfg {
        RunConfig::Minimize { solver, out, w_out } => run_minimize(&cfg, solver, out, w_out),
        RunConfig::Folds { n, numeric, out } => run_folds(&cfg, *n, *numeric, out),
        RunConfig::Sweep { alphas, ks, branch, out } => run_sweep(&cfg, alphas, ks, *branch, out),
        RunConfig::Recover { profile, n, h, out, summary_out } => {
            run_recover(&cfg, *profile, *n, h, out, summary_out)
        }
        RunConfig::PlotG { alpha, branch, samples, out } => run_plot(&cfg, *alpha, *branch, *samples, out),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn write_csv(cfg: &RunConfig, path: &Path, body: &str) -> Result<(), CliError> {
    write(path, &format!("{}\n{body}", cfg.header()))
}

/// JSON files carry the header under `meta`, since JSON has no comments.
fn write_json(cfg: &RunConfig, path: &Path, payload: impl Serialize) -> Result<(), CliError> {
    let mut v = serde_json::to_value(payload).expect("plain data");
    let meta = json!({
        "tool": "dcone",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.hash(),
        "header": cfg.header(),
    });
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("meta".into(), meta);
        }
        None => v = json!({ "meta": meta, "data": v }),
    }
    let mut text = serde_json::to_string_pretty(&v).expect("plain data");
    text.push('\n');
    write(path, &text)
}

fn opt(x: Option<impl ToString>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn run_minimize(cfg: &RunConfig, solver: &SolverConfig, out: &Path, w_out: &Path) -> Result<(), CliError> {
    let summary = obstacle::minimize_restarts(solver)?;
    let best = &summary.best;
    if !best.is_feasible(solver.outer_tol) {
        return Err(CliError::NoConvergence(format!(
            "best run is infeasible (|constraint| = {:e}, min w = {})",
            best.residuals.feasibility.abs(),
            best.w.min()
        )));
    }
    let runs: Vec<_> = summary
        .runs
        .iter()
        .map(|r| match &r.result {
            Ok(rep) => json!({ "init": r.label, "energy": rep.energy, "lambda": rep.lambda }),
            Err(e) => json!({ "init": r.label, "error": e.to_string() }),
        })
        .collect();
    let mut v = serde_json::to_value(best.json_value()).expect("plain data");
    v["init"] = json!(best.init);
    v["runs"] = json!(runs);
    write_json(cfg, out, v)?;
    let csv = best.to_csv();
    write_csv(cfg, w_out, &csv)?;
    eprintln!(
        "dcone: best of {} starts: energy {:.10}, lambda {:.6}, {} fold(s)",
        summary.runs.len(),
        best.energy,
        best.lambda,
        best.intervals.len()
    );
    Ok(())
}

fn run_folds(cfg: &RunConfig, n: usize, numeric: bool, out: &Path) -> Result<(), CliError> {
    let grid = dcone::make_grid(n).map_err(|e| CliError::Validation(e.to_string()))?;
    let sf = folds::solve_single_fold(grid)?;
    let tol = ConditionTolerances::default();
    let analytic = obstacle::check_necessary_conditions(&MinimizerReport::from_candidate(&sf.candidate, 1e-7), &tol)?;
    let mut v = json!({
        "alpha": sf.alpha,
        "lambda": sf.lambda,
        "z": sf.z,
        "branch": sf.branch,
        "opening_angle_deg": sf.opening_angle_deg(),
        "candidate": sf.candidate,
        "conditions": analytic,
    });
    if numeric {
        let solver = SolverConfig { n, ..Default::default() };
        let rep = obstacle::minimize(&solver, &Init::Bump)?;
        let checks = obstacle::check_necessary_conditions(&rep, &tol)?;
        v["numeric"] = json!({
            "energy": rep.energy,
            "lambda": rep.lambda,
            "intervals": rep.intervals,
            "energy_rel_diff": rep.energy / sf.candidate.energy - 1.0,
            "conditions": checks,
        });
    }
    write_json(cfg, out, v)?;
    eprintln!("dcone: single fold z = {:.10}, opening angle {:.6} deg", sf.z, sf.opening_angle_deg());
    Ok(())
}

fn run_sweep(cfg: &RunConfig, alphas: &[f64], ks: &[f64], branch: Branch, out: &Path) -> Result<(), CliError> {
    let mut s = String::from("alpha,k,branch,root_index,z,energy,feasible\n");
    for r in folds::sweep(alphas, ks, branch) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.alpha,
            r.k,
            r.branch,
            opt(r.root_index),
            opt(r.z),
            opt(r.energy),
            r.status.as_str()
        );
    }
    write_csv(cfg, out, &s)
}

fn run_recover(
    cfg: &RunConfig,
    profile: Profile,
    n: usize,
    h: &[f64],
    out: &Path,
    summary_out: &Path,
) -> Result<(), CliError> {
    let grid = dcone::make_grid(n).map_err(|e| CliError::Validation(e.to_string()))?;
    let w = match profile {
        Profile::SingleFold => folds::solve_single_fold(grid)?.candidate.w,
        Profile::Minimizer => {
            let solver = SolverConfig { n, ..Default::default() };
            obstacle::minimize(&solver, &Init::Bump)?.w
        }
    };
    let table = recovery::gamma_check(&w, h)?;
    write_csv(cfg, out, &table.to_csv())?;
    let summary: serde_json::Value = serde_json::from_str(&table.summary_json()).expect("own output");
    write_json(cfg, summary_out, json!({ "summary": summary, "rows": table.rows }))?;
    for r in &table.rows {
        eprintln!("dcone: h = {:<6} rel_err {:.3e}  gap {:.3e}  |a| {:.3e}", r.h, r.rel_err, r.gap_pre_close, r.a_norm);
    }
    Ok(())
}

fn run_plot(cfg: &RunConfig, alpha: f64, branch: Branch, samples: usize, out: &Path) -> Result<(), CliError> {
    let rows = folds::plot_g(alpha, branch, samples)?;
    let mut s = String::from("z,g_value,is_pole\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{}", r.z, r.g_value, r.is_pole);
    }
    write_csv(cfg, out, &s)?;
    let (poles, branches) = folds::pole_and_branch_counts(&rows);
    eprintln!("dcone: {poles} pole(s), {branches} branch(es)");
    Ok(())
}
