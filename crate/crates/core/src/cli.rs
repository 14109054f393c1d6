use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cpds::engine::{
    partial_cpds, sweep, CounterfactualSpec, EmptyPolicy, EngineOptions, GridSpec, GridTable, Mode,
    PartialCpds, DEFAULT_PARTITIONS,
};
use cpds::error::{CpdsError, Result};
use cpds::game::load_game;
use cpds::harness::{run_harness, HarnessConfig};
use cpds::identification::{ingest_posterior, regular_values, CredibleRule, ThetaGrid};
use cpds::outcome::{OutcomeSpec, ProfilePredicate};
use cpds::report::{
    build_table, curves_csv, emit_table, solve_report, to_json_pretty, write_atomic, TableDocument,
    TableRun,
};
use cpds::solution::{Concept, LinearFunctional};

#[derive(Parser, Debug)]
#[command(
    name = "cpds",
    version,
    about = "Counterfactual predictive distribution sets for finite games"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium set of one game, with optional objective optima.
    Solve(SolveArgs),
    /// Bounds and event probabilities at one parameter value.
    Counterfactual(CounterfactualArgs),
    /// Estimated identified set and credible set table from a posterior.
    Identify(IdentifyArgs),
    /// Bounds over a parameter sweep, as CSV.
    Curves(CurvesArgs),
    /// Posterior consistency checks.
    Harness(HarnessArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    concept: Concept,
    /// `expected_entrants`, `min_entrants=K`, `exact_entrants=K`, `welfare=w1,w2,..`,
    /// `affine=c1,c2,..` or an outcome as JSON.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EngineArgs {
    #[arg(long, default_value_t = 10_000)]
    draws: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Integrate exactly over a discrete or degenerate distribution.
    #[arg(long)]
    exact: bool,
    /// Nearest-node lookup: a step (grid covering the 6-sigma box) or a JSON
    /// file with `lo`, `hi` and `step` per free utility coordinate.
    #[arg(long, value_name = "G")]
    grid_lookup: Option<String>,
    /// Exclude draws with no solution instead of failing.
    #[arg(long)]
    record_empty: bool,
    #[arg(long, default_value_t = DEFAULT_PARTITIONS)]
    partitions: usize,
}

#[derive(Args, Debug)]
struct CounterfactualArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// A counterfactual spec or a table document.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    posterior: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = "width_rank")]
    credible_rule: CredibleRule,
    /// Decimal places in table.csv.
    #[arg(long, default_value_t = 1)]
    precision: usize,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long)]
    spec: PathBuf,
    /// `name=lo:hi:step`; several sweeps form a product grid.
    #[arg(long, required = true, allow_hyphen_values = true)]
    sweep: Vec<String>,
    /// `name=value` for parameters not swept.
    #[arg(long, allow_hyphen_values = true)]
    fix: Vec<String>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct HarnessArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error_class: &'a str,
    message: String,
}

/// Runs the CLI and returns the process exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return report_error(&e);
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CpdsError) -> i32 {
    let class = e.class();
    let report = ErrorReport {
        error_class: class.name(),
        message: e.to_string(),
    };
    eprintln!(
        "{}",
        serde_json::to_string(&report).unwrap_or_else(|_| e.to_string())
    );
    class.exit_code()
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CPDS_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CpdsError::config(format!("CPDS_THREADS={v:?} is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CpdsError::config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Counterfactual(a) => counterfactual(a),
        Command::Identify(a) => identify(a),
        Command::Curves(a) => curves(a),
        Command::Harness(a) => harness(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_objective(s: &str) -> Result<OutcomeSpec> {
    let s = s.trim();
    if s.starts_with('{') || s.starts_with('"') {
        return Ok(serde_json::from_str(s)?);
    }
    let (key, value) = s.split_once('=').unwrap_or((s, ""));
    let list = || -> Result<Vec<f64>> {
        value
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| CpdsError::config(format!("bad number {t:?} in objective")))
            })
            .collect()
    };
    let count = || -> Result<usize> {
        value
            .trim()
            .parse()
            .map_err(|_| CpdsError::config(format!("bad count {value:?} in objective")))
    };
    Ok(match key {
        "expected_entrants" => OutcomeSpec::ExpectedEntrants,
        "min_entrants" => OutcomeSpec::Event(ProfilePredicate::MinEntrants(count()?)),
        "exact_entrants" => OutcomeSpec::Event(ProfilePredicate::ExactEntrants(count()?)),
        "welfare" => OutcomeSpec::Welfare(list()?),
        "affine" => OutcomeSpec::Affine(LinearFunctional::new(list()?, 0.0)?),
        _ => return Err(CpdsError::config(format!("unknown objective {s:?}"))),
    })
}

fn solve(a: SolveArgs) -> Result<()> {
    let game = load_game(&a.game)?;
    let objective = a.objective.as_deref().map(parse_objective).transpose()?;
    let report = solve_report(&game, a.concept, objective.as_ref())?;
    emit(a.out.as_deref(), &to_json_pretty(&report)?)
}

fn engine_options(
    spec: &CounterfactualSpec,
    theta: &[f64],
    a: &EngineArgs,
) -> Result<(EngineOptions, Vec<String>)> {
    let mut warnings = Vec::new();
    let lookup = match &a.grid_lookup {
        None => None,
        Some(g) => {
            let grid = match g.parse::<f64>() {
                Ok(step) => GridSpec::covering(spec, theta, step)?,
                Err(_) => serde_json::from_str(&std::fs::read_to_string(g)?)?,
            };
            let table = GridTable::new(spec, grid)?;
            warnings.extend(table.bracket_warnings(spec, theta));
            Some(Arc::new(table))
        }
    };
    if a.partitions == 0 {
        return Err(CpdsError::config("partitions must be positive"));
    }
    Ok((
        EngineOptions {
            mode: if a.exact {
                Mode::Exact
            } else {
                Mode::MonteCarlo
            },
            empty: if a.record_empty {
                EmptyPolicy::RecordEmpty
            } else {
                EmptyPolicy::Strict
            },
            partitions: a.partitions,
            lookup,
        },
        warnings,
    ))
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

/// Indeterminate must-tests are reported after the artifact is written.
fn check_indeterminate(results: &[PartialCpds]) -> Result<()> {
    let count: u64 = results.iter().map(|r| r.indeterminate_draws).sum();
    if count > 0 {
        return Err(CpdsError::Indeterminate { count });
    }
    Ok(())
}

#[derive(Serialize)]
struct CounterfactualOutput<'a> {
    theta: &'a [f64],
    seed: u64,
    #[serde(flatten)]
    result: &'a PartialCpds,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    warnings: &'a [String],
}

fn counterfactual(a: CounterfactualArgs) -> Result<()> {
    let spec = CounterfactualSpec::load(&a.spec)?;
    let (opts, warnings) = engine_options(&spec, &a.theta, &a.engine)?;
    warn(&warnings);
    let r = partial_cpds(&spec, &a.theta, a.engine.draws, a.engine.seed, &opts)?;
    let out = CounterfactualOutput {
        theta: &a.theta,
        seed: a.engine.seed,
        result: &r,
        warnings: &warnings,
    };
    emit(a.out.as_deref(), &to_json_pretty(&out)?)?;
    check_indeterminate(&[r])
}

fn identify(a: IdentifyArgs) -> Result<()> {
    let doc = TableDocument::from_json(&std::fs::read_to_string(&a.spec)?)?;
    let grid = ThetaGrid::load(&a.grid)?;
    let draws = ingest_posterior(&a.posterior, &grid)?;
    let first = &doc.scenarios[0].spec;
    let (engine, warnings) = engine_options(first, grid.node(0), &a.engine)?;
    warn(&warnings);
    let run = TableRun {
        n: a.engine.draws,
        seed: a.engine.seed,
        level: a.level,
        rule: a.credible_rule,
        engine,
    };
    let table = build_table(&doc, &grid, &draws, &run)?;
    emit_table(&table, &a.out, a.precision)
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(n, v)| (n.trim(), v.trim()))
        .ok_or_else(|| CpdsError::config(format!("expected name=value, got {s:?}")))
}

fn curves(a: CurvesArgs) -> Result<()> {
    let spec = CounterfactualSpec::load(&a.spec)?;
    let mut axes: Vec<Option<Vec<f64>>> = vec![None; spec.theta.len()];
    let position = |name: &str| {
        spec.theta
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| CpdsError::config(format!("unknown theta coordinate {name:?}")))
    };
    for s in &a.sweep {
        let (name, range) = split_assignment(s)?;
        let parts: Vec<f64> = range
            .split(':')
            .map(|t| {
                t.parse()
                    .map_err(|_| CpdsError::config(format!("bad sweep bound {t:?}")))
            })
            .collect::<Result<_>>()?;
        let [lo, hi, step] = parts[..] else {
            return Err(CpdsError::config(format!(
                "sweep {s:?} is not name=lo:hi:step"
            )));
        };
        let k = position(name)?;
        if axes[k].is_some() {
            return Err(CpdsError::config(format!("{name} is given twice")));
        }
        axes[k] = Some(regular_values(lo, hi, step)?);
    }
    for f in &a.fix {
        let (name, value) = split_assignment(f)?;
        let v: f64 = value
            .parse()
            .map_err(|_| CpdsError::config(format!("bad value in {f:?}")))?;
        let k = position(name)?;
        if axes[k].is_some() {
            return Err(CpdsError::config(format!("{name} is given twice")));
        }
        axes[k] = Some(vec![v]);
    }
    let axes: Vec<Vec<f64>> = axes
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            a.ok_or_else(|| {
                CpdsError::config(format!(
                    "theta coordinate {:?} needs --sweep or --fix",
                    spec.theta[k]
                ))
            })
        })
        .collect::<Result<_>>()?;
    // Product grid, first coordinate varying slowest.
    let mut thetas: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        thetas = thetas
            .into_iter()
            .flat_map(|t| {
                axis.iter().map(move |v| {
                    let mut t = t.clone();
                    t.push(*v);
                    t
                })
            })
            .collect();
    }
    let (opts, warnings) = engine_options(&spec, &thetas[0], &a.engine)?;
    warn(&warnings);
    let rows = sweep(&spec, &thetas, a.engine.draws, a.engine.seed, &opts)?;
    write_atomic(&a.out, curves_csv(&spec.theta, &thetas, &rows).as_bytes())?;
    check_indeterminate(&rows)
}

fn harness(a: HarnessArgs) -> Result<()> {
    let config: HarnessConfig = serde_json::from_str(&std::fs::read_to_string(&a.scenario)?)?;
    let report = run_harness(&config)?;
    write_atomic(&a.out, to_json_pretty(&report)?.as_bytes())
}
