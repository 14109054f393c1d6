//! Report assembly and file output: equilibrium summaries, curve tables and the
//! estimated/credible-set table.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{sweep, CounterfactualSpec, EngineOptions, Mode, PartialCpds};
use crate::error::{CpdsError, Result};
use crate::game::Game;
use crate::identification::{
    credible_set, estimated_identified_set, posterior_cpds, CredibleRule, IdentifiedSetDraw,
    Quantity, QuantityInterval, ThetaGrid,
};
use crate::outcome::{outcome_functional, EventSet, OutcomeSpec};
use crate::polytope::enumerate_vertices;
use crate::solution::{
    maximize_over, solution_set, Concept, Direction, LinearFunctional, Polyhedron, SolutionSet,
};

/// Writes via a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CpdsError::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub value: f64,
    pub solution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub max: Optimum,
    pub min: Optimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub concept: Concept,
    pub num_profiles: usize,
    /// Extreme points of the solution set (all solutions for finite sets).
    pub vertices: Vec<Vec<f64>>,
    /// Defining constraints, for polyhedral sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Polyhedron>,
    /// Smallest and largest probability of each profile over the set.
    pub extents: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveReport>,
    pub knife_edge: bool,
}

pub fn solve_report(
    game: &Game,
    concept: Concept,
    objective: Option<&OutcomeSpec>,
) -> Result<SolveReport> {
    let n = game.num_profiles();
    let (set, diag) = solution_set(game, concept)?;
    let (vertices, constraints) = match &set {
        SolutionSet::Vertices(v) => (v.iter().map(|s| s.probs().to_vec()).collect(), None),
        SolutionSet::Polyhedron { constraints, .. } => (
            enumerate_vertices(constraints, n)
                .unwrap_or_default()
                .into_iter()
                .map(|v| {
                    v.into_iter()
                        .map(|x| if x.abs() < 1e-12 { 0.0 } else { x })
                        .collect()
                })
                .collect(),
            Some(constraints.clone()),
        ),
    };
    let extents = if set.is_empty_list() {
        Vec::new()
    } else {
        (0..n)
            .map(|k| {
                let mut c = vec![0.0; n];
                c[k] = 1.0;
                let f = LinearFunctional::new(c, 0.0)?;
                let lo = maximize_over(&set, &f, Direction::Min)?.0;
                let hi = maximize_over(&set, &f, Direction::Max)?.0;
                Ok([lo, hi])
            })
            .collect::<Result<Vec<_>>>()?
    };
    let objective = objective
        .map(|spec| {
            let f = outcome_functional(spec, game)?;
            let opt = |d| -> Result<Optimum> {
                let (value, s) = maximize_over(&set, &f, d)?;
                Ok(Optimum {
                    value,
                    solution: s.probs().to_vec(),
                })
            };
            Ok::<_, CpdsError>(ObjectiveReport {
                max: opt(Direction::Max)?,
                min: opt(Direction::Min)?,
            })
        })
        .transpose()?;
    Ok(SolveReport {
        concept,
        num_profiles: n,
        vertices,
        constraints,
        extents,
        objective,
        knife_edge: diag.knife_edge,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if !x.is_nan() => format!("{x}"),
        _ => String::new(),
    }
}

/// One CSV row per parameter value.
pub fn curves_csv(names: &[String], thetas: &[Vec<f64>], rows: &[PartialCpds]) -> String {
    let mut out = String::new();
    for n in names {
        let _ = write!(out, "{n},");
    }
    out.push_str(
        "e_inf,e_sup,p_could,p_must,p_cannot,se_e_inf,se_e_sup,se_p_could,se_p_must,se_p_cannot,\
         n_draws,excluded_draws\n",
    );
    for (theta, r) in thetas.iter().zip(rows) {
        for v in theta {
            let _ = write!(out, "{v},");
        }
        let s = &r.mc_stderr;
        let fields = [
            fmt_opt(Some(r.e_inf)),
            fmt_opt(Some(r.e_sup)),
            fmt_opt(r.p_could),
            fmt_opt(r.p_must),
            fmt_opt(r.p_cannot),
            fmt_opt(Some(s.e_inf)),
            fmt_opt(Some(s.e_sup)),
            fmt_opt(s.p_could),
            fmt_opt(s.p_must),
            fmt_opt(s.p_cannot),
            r.n_draws.to_string(),
            r.excluded_draws.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Column of a report table: one quantity, optionally with its own outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub quantity: Quantity,
    /// Replaces the scenario's outcome for this column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSet>,
    /// Real-world value; cells whose interval excludes it are flagged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub spec: CounterfactualSpec,
}

/// Rows are counterfactual scenarios, columns are quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableDocument {
    pub scenarios: Vec<ScenarioSpec>,
    pub columns: Vec<ColumnSpec>,
}

impl TableDocument {
    /// Reads a table document, or wraps a single counterfactual spec as a one-row
    /// table with its expectation (and event, if events are set) columns.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("scenarios").is_some() {
            let doc: Self = serde_json::from_value(value)?;
            doc.validate()?;
            return Ok(doc);
        }
        let spec: CounterfactualSpec = serde_json::from_value(value)?;
        spec.validate()?;
        let mut columns = vec![ColumnSpec {
            name: "expectation".into(),
            quantity: Quantity::Expectation,
            outcome: None,
            events: None,
            observed: None,
        }];
        if spec.events.is_some() {
            columns.push(ColumnSpec {
                name: "event".into(),
                quantity: Quantity::Event,
                outcome: None,
                events: None,
                observed: None,
            });
        }
        Ok(Self {
            scenarios: vec![ScenarioSpec {
                name: "counterfactual".into(),
                spec,
            }],
            columns,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.columns.is_empty() {
            return Err(CpdsError::config("a table needs scenarios and columns"));
        }
        for s in &self.scenarios {
            s.spec.validate()?;
        }
        if let Some(v) = self
            .columns
            .iter()
            .filter_map(|c| c.observed)
            .find(|v| !v.is_finite())
        {
            return Err(CpdsError::config(format!(
                "observed value {v} is not finite"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimated: QuantityInterval,
    pub credible: QuantityInterval,
    /// Present only when the column has an observed value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_excludes_observed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credible_excludes_observed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub seed: u64,
    pub n_draws: u64,
    pub mode: Mode,
    pub partitions: usize,
    pub level: f64,
    pub credible_rule: CredibleRule,
    pub posterior_draws: usize,
    pub grid_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub metadata: TableMetadata,
    pub columns: Vec<String>,
    pub observed: Vec<Option<f64>>,
    pub rows: Vec<TableRow>,
}

/// Settings for [`build_table`].
#[derive(Debug, Clone)]
pub struct TableRun {
    pub n: u64,
    pub seed: u64,
    pub level: f64,
    pub rule: CredibleRule,
    pub engine: EngineOptions,
}

/// Evaluates every scenario and column over the grid and summarizes the posterior.
pub fn build_table(
    doc: &TableDocument,
    grid: &ThetaGrid,
    draws: &[IdentifiedSetDraw],
    run: &TableRun,
) -> Result<ReportTable> {
    doc.validate()?;
    let mut rows = Vec::with_capacity(doc.scenarios.len());
    for s in &doc.scenarios {
        if s.spec.theta.len() != grid.dim() {
            return Err(CpdsError::dim(format!(
                "scenario {:?} has {} parameters, the grid has {}",
                s.name,
                s.spec.theta.len(),
                grid.dim()
            )));
        }
        let mut cells = Vec::with_capacity(doc.columns.len());
        for col in &doc.columns {
            let mut spec = s.spec.clone();
            if let Some(o) = &col.outcome {
                spec.outcome = o.clone();
            }
            if let Some(e) = &col.events {
                spec.events = Some(e.clone());
            }
            spec.validate()?;
            let profile = sweep(&spec, grid.nodes(), run.n, run.seed, &run.engine)?;
            let intervals = posterior_cpds(&profile, draws, col.quantity)?;
            let estimated = estimated_identified_set(&intervals)?;
            let credible = credible_set(&intervals, run.level, run.rule)?;
            cells.push(Cell {
                estimated,
                credible,
                estimated_excludes_observed: col.observed.map(|v| !estimated.contains(v)),
                credible_excludes_observed: col.observed.map(|v| !credible.contains(v)),
            });
        }
        rows.push(TableRow {
            scenario: s.name.clone(),
            cells,
        });
    }
    Ok(ReportTable {
        metadata: TableMetadata {
            seed: run.seed,
            n_draws: run.n,
            mode: run.engine.mode,
            partitions: run.engine.partitions,
            level: run.level,
            credible_rule: run.rule,
            posterior_draws: draws.len(),
            grid_nodes: grid.len(),
        },
        columns: doc.columns.iter().map(|c| c.name.clone()).collect(),
        observed: doc.columns.iter().map(|c| c.observed).collect(),
        rows,
    })
}

fn round_display(v: f64, precision: usize) -> String {
    let s = format!("{v:.precision$}");
    // Avoid "-0.0".
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

impl ReportTable {
    /// Two rows per scenario (estimated set, then credible set) with `lo, hi` cells,
    /// a flags column naming columns whose interval excludes the observed value, and
    /// a final row of observed values.
    pub fn to_csv(&self, precision: usize) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["scenario".to_owned(), "row".to_owned()];
        header.extend(self.columns.iter().cloned());
        header.push("flags".into());
        w.write_record(&header)?;
        let level = format!("{}% credible set", self.metadata.level * 100.0);
        for row in &self.rows {
            for (label, pick) in [("estimated identified set", true), (level.as_str(), false)] {
                let mut rec = vec![row.scenario.clone(), label.to_owned()];
                let mut flags = Vec::new();
                for (c, cell) in row.cells.iter().enumerate() {
                    let (iv, flag) = if pick {
                        (cell.estimated, cell.estimated_excludes_observed)
                    } else {
                        (cell.credible, cell.credible_excludes_observed)
                    };
                    rec.push(format!(
                        "{}, {}",
                        round_display(iv.lo, precision),
                        round_display(iv.hi, precision)
                    ));
                    if flag == Some(true) {
                        flags.push(self.columns[c].clone());
                    }
                }
                rec.push(flags.join(";"));
                w.write_record(&rec)?;
            }
        }
        if self.observed.iter().any(Option::is_some) {
            let mut rec = vec!["observed".to_owned(), String::new()];
            rec.extend(
                self.observed
                    .iter()
                    .map(|o| o.map(|v| round_display(v, precision)).unwrap_or_default()),
            );
            rec.push(String::new());
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CpdsError::config(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CpdsError::config(e.to_string()))
    }
}

/// Writes `table.csv` and the full-precision `table.json` into `dir`.
pub fn emit_table(table: &ReportTable, dir: &Path, precision: usize) -> Result<()> {
    for row in &table.rows {
        if row.cells.len() != table.columns.len() {
            return Err(CpdsError::dim(format!(
                "scenario {:?} has {} cells for {} columns",
                row.scenario,
                row.cells.len(),
                table.columns.len()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("table.csv"), table.to_csv(precision)?.as_bytes())?;
    write_atomic(&dir.join("table.json"), to_json_pretty(table)?.as_bytes())?;
    Ok(())
}
