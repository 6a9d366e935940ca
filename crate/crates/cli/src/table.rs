//! Numeric delimited tables: traces, schedules, learning curves and sweep
//! summaries share one on-disk layout.
//!
//! ```text
//! # magcool <kind> v1
//! col_a,col_b,...
//! 1.2345678901234567e-3,42,...
//! ```
//!
//! Values are written with 17 significant digits (integers exactly), so
//! parsing a written table gives back the same bits.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use magcool_core::{
    dynamics::occupancy, to_periods, Complex64, ControlSchedule, CovarianceState, EnvConfig, EpisodeTrace,
    StepRecord, SystemSpec,
};
use serde_json::{json, Map, Value};

use crate::{CliError, Result};

pub const TABLE_VERSION: u32 = 1;
const DELIM: char = ',';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableKind {
    Trace,
    Schedule,
    Curve,
    Sideband,
    Limits,
    Polar,
    Restarts,
    /// Several tables stacked in long format with a leading key column.
    Sweep,
}

impl TableKind {
    pub const ALL: [TableKind; 8] = [
        TableKind::Trace,
        TableKind::Schedule,
        TableKind::Curve,
        TableKind::Sideband,
        TableKind::Limits,
        TableKind::Polar,
        TableKind::Restarts,
        TableKind::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Trace => "trace",
            TableKind::Schedule => "schedule",
            TableKind::Curve => "curve",
            TableKind::Sideband => "sideband",
            TableKind::Limits => "limits",
            TableKind::Polar => "polar",
            TableKind::Restarts => "restarts",
            TableKind::Sweep => "sweep",
        }
    }

    /// Whether the first column must increase strictly.
    fn ordered(self) -> bool {
        matches!(self, TableKind::Trace | TableKind::Schedule | TableKind::Curve | TableKind::Polar)
    }

    /// One-line description of the kind, used in exported schema files.
    pub fn describe(self) -> &'static str {
        match self {
            TableKind::Trace => "one row per control step; time in phonon periods, per-mode occupancy n_*, quotient q_* (occupancy over bath occupancy, modes with a hot bath only), control values c*, reward",
            TableKind::Schedule => "piecewise-constant controls; t_periods is the start of each interval",
            TableKind::Curve => "one row per training episode; eval_* columns are NaN when no evaluation ran",
            TableKind::Sideband => "constant-coupling sweep; times in periods, NaN when the target was never reached",
            TableKind::Limits => "Raman time limit for each (omega_m, omega_s, omega_p)",
            TableKind::Polar => "complex control per step of a bipartite episode",
            TableKind::Restarts => "final quotient of every optimizer restart, best first",
            TableKind::Sweep => "long-format concatenation of several tables keyed by the first column",
        }
    }
}

impl std::fmt::Display for TableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TableKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::Invalid(format!("unknown table kind '{s}'")))
    }
}

/// Formats a value so that `str::parse::<f64>` returns the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(kind: TableKind, columns: Vec<String>) -> Self {
        Self {
            kind,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn check(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(CliError::Invalid(format!("{} table has no columns", self.kind)));
        }
        if let Some(i) = self.rows.iter().position(|r| r.len() != self.columns.len()) {
            return Err(CliError::Invalid(format!(
                "{} table row {i} has {} values for {} columns",
                self.kind,
                self.rows[i].len(),
                self.columns.len()
            )));
        }
        if self.kind.ordered() {
            if let Some(i) = self.rows.windows(2).position(|w| !(w[1][0] > w[0][0])) {
                return Err(CliError::Invalid(format!(
                    "{} table: column '{}' is not increasing at row {}",
                    self.kind,
                    self.columns[0],
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Body without the kind line: header plus rows.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(&DELIM.to_string());
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            s.push_str(&cells.join(&DELIM.to_string()));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# magcool {} v{TABLE_VERSION}", self.kind).unwrap();
        s.push_str(&self.to_csv());
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.check()?;
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses a table with its kind line, or a bare header-plus-rows body
    /// when `kind` is supplied.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::parse_with(text, origin, None)
    }

    pub fn parse_with(text: &str, origin: &Path, assume: Option<TableKind>) -> Result<Self> {
        let err = |line: usize, message: String| CliError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = lines.next();
        let kind = match next {
            Some((n, l)) if l.starts_with('#') => {
                let parts: Vec<&str> = l.trim_start_matches('#').split_whitespace().collect();
                let (name, version) = match parts.as_slice() {
                    ["magcool", name, version] => (*name, *version),
                    _ => return Err(err(n, format!("expected '# magcool <kind> v{TABLE_VERSION}'"))),
                };
                let found: u32 = version
                    .strip_prefix('v')
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(n, format!("bad version tag '{version}'")))?;
                if found != TABLE_VERSION {
                    return Err(CliError::Version {
                        path: origin.to_path_buf(),
                        found,
                        expected: TABLE_VERSION,
                    });
                }
                next = lines.next();
                name.parse().map_err(|e: CliError| err(n, e.to_string()))?
            }
            _ => assume.ok_or_else(|| err(1, "missing '# magcool <kind> v1' line".into()))?,
        };
        let (hn, header) = next.ok_or_else(|| err(1, "missing header row".into()))?;
        let columns: Vec<String> = header.split(DELIM).map(|c| c.trim().to_string()).collect();
        if columns.iter().any(String::is_empty) {
            return Err(err(hn, "empty column name".into()));
        }
        let mut table = Table::new(kind, columns);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(DELIM).collect();
            if cells.len() != table.columns.len() {
                return Err(err(n, format!("{} fields, header has {}", cells.len(), table.columns.len())));
            }
            let row = cells
                .iter()
                .zip(&table.columns)
                .map(|(c, name)| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| err(n, format!("field '{name}': '{c}' is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            table.rows.push(row);
        }
        table.check().map_err(|e| err(0, e.to_string()))?;
        Ok(table)
    }

    /// JSON with a schema block and one record per row. Non-finite values
    /// become `null`.
    pub fn to_json(&self) -> Value {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let m: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.clone(), serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number)))
                    .collect();
                Value::Object(m)
            })
            .collect();
        json!({
            "schema": self.schema(),
            "records": records,
        })
    }

    pub fn schema(&self) -> Value {
        json!({
            "kind": self.kind.as_str(),
            "version": TABLE_VERSION,
            "description": self.kind.describe(),
            "columns": self.columns,
            "units": "times in phonon periods, rates in units of the phonon frequency",
        })
    }

    /// Stacks tables with identical columns, prefixing each row with its key.
    pub fn long_format(key_name: &str, parts: &[(f64, Table)]) -> Result<Table> {
        let first = parts
            .first()
            .ok_or_else(|| CliError::Invalid("nothing to combine".into()))?;
        let mut columns = vec![key_name.to_string()];
        columns.extend(first.1.columns.iter().cloned());
        let mut out = Table::new(TableKind::Sweep, columns);
        for (key, t) in parts {
            if t.columns != first.1.columns || t.kind != first.1.kind {
                return Err(CliError::Invalid(format!(
                    "cannot combine a {} table with columns {:?} and a {} table with columns {:?}",
                    first.1.kind, first.1.columns, t.kind, t.columns
                )));
            }
            for row in &t.rows {
                let mut r = Vec::with_capacity(row.len() + 1);
                r.push(*key);
                r.extend_from_slice(row);
                out.rows.push(r);
            }
        }
        Ok(out)
    }
}

fn control_columns(system: &SystemSpec) -> Vec<String> {
    (0..system.n_control_slots)
        .flat_map(|k| {
            if system.slot_is_complex(k) {
                vec![format!("c{k}_re"), format!("c{k}_im")]
            } else {
                vec![format!("c{k}")]
            }
        })
        .collect()
}

fn control_values(system: &SystemSpec, controls: &[Complex64]) -> Vec<f64> {
    controls
        .iter()
        .enumerate()
        .flat_map(|(k, c)| if system.slot_is_complex(k) { vec![c.re, c.im] } else { vec![c.re] })
        .collect()
}

/// Trace table of an episode: time, occupancies, quotients, controls, reward.
pub fn trace_table(system: &SystemSpec, trace: &EpisodeTrace) -> Table {
    let hot: Vec<usize> = (0..system.n_modes())
        .filter(|&k| system.modes[k].bath_occupancy > 0.0)
        .collect();
    let mut columns = vec!["t_periods".to_string()];
    columns.extend(system.modes.iter().map(|m| format!("n_{}", m.label)));
    columns.extend(hot.iter().map(|&k| format!("q_{}", system.modes[k].label)));
    columns.extend(control_columns(system));
    columns.push("reward".into());
    let mut t = Table::new(TableKind::Trace, columns);
    for s in &trace.steps {
        let mut row = vec![to_periods(s.time)];
        row.extend_from_slice(&s.occupancies);
        row.extend(hot.iter().map(|&k| s.occupancies[k] / system.modes[k].bath_occupancy));
        row.extend(control_values(system, &s.controls));
        row.push(s.reward);
        t.push(row);
    }
    t
}

/// The controls an episode applied, as a replayable schedule table.
pub fn schedule_table(system: &SystemSpec, schedule: &ControlSchedule) -> Table {
    let mut columns = vec!["t_periods".to_string()];
    columns.extend(control_columns(system));
    let mut t = Table::new(TableKind::Schedule, columns);
    for (k, c) in schedule.values.iter().enumerate() {
        let mut row = vec![to_periods(k as f64 * schedule.step)];
        row.extend(control_values(system, c));
        t.push(row);
    }
    t
}

/// Reads a schedule table back into controls on a grid of spacing `step`.
pub fn schedule_from_table(system: &SystemSpec, table: &Table, step: f64) -> Result<ControlSchedule> {
    let expected = {
        let mut c = vec!["t_periods".to_string()];
        c.extend(control_columns(system));
        c
    };
    if table.kind != TableKind::Schedule || table.columns != expected {
        return Err(CliError::Invalid(format!(
            "expected a schedule table with columns {expected:?}, found a {} table with {:?}",
            table.kind, table.columns
        )));
    }
    let values = table
        .rows
        .iter()
        .map(|row| {
            let mut it = row[1..].iter();
            (0..system.n_control_slots)
                .map(|k| {
                    let re = *it.next().expect("column count checked");
                    let im = if system.slot_is_complex(k) { *it.next().expect("column count checked") } else { 0.0 };
                    Complex64::new(re, im)
                })
                .collect()
        })
        .collect();
    Ok(ControlSchedule::new(step, values)?)
}

pub fn schedule_of(trace: &EpisodeTrace, step: f64) -> Result<ControlSchedule> {
    Ok(ControlSchedule::new(step, trace.steps.iter().map(|s| s.controls.clone()).collect())?)
}

/// Scores open-loop states exactly as the environment scores its own steps,
/// so replaying an agent's controls reproduces its trace.
pub fn episode_from_states(env: &EnvConfig, schedule: &ControlSchedule, states: &[CovarianceState]) -> EpisodeTrace {
    let system = &env.system;
    let penalty_mode = system.mode_index("magnon");
    let steps = states
        .iter()
        .zip(&schedule.values)
        .map(|(s, c)| {
            let occ = s.occupancies();
            let penalty = penalty_mode.map_or(0.0, |m| occ[m]);
            StepRecord {
                time: s.time,
                action: Vec::new(),
                controls: c.clone(),
                reward: env.reward.evaluate(occupancy(s, system.target_mode), penalty),
                occupancies: occ,
            }
        })
        .collect();
    EpisodeTrace {
        steps,
        target_mode: system.target_mode,
        n_thermal: env.reward.n_thermal,
        clipped_actions: 0,
        aborted: None,
    }
}

/// Polar view of the complex control on slot 0.
pub fn polar_table(trace: &EpisodeTrace) -> Table {
    let cols = ["step", "t_periods", "re", "im", "abs", "arg"];
    let mut t = Table::new(TableKind::Polar, cols.iter().map(|c| c.to_string()).collect());
    for (k, s) in trace.steps.iter().enumerate() {
        let c = s.controls[0];
        t.push(vec![k as f64, to_periods(s.time), c.re, c.im, c.norm(), c.arg()]);
    }
    t
}
