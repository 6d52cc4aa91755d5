//! Machine-readable outputs and their schemas.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use asep_core::transition::{Configuration, Evaluation, PassKind, QuadOptions};
use schemars::{schema_for, JsonSchema};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{ProblemFile, RunManifest, TargetSpec};
use crate::CliError;

/// Bumped only when a field is removed or changes meaning.
pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub format: u32,
    pub command: String,
    pub passed: bool,
    /// Formulas and algorithms the numbers came from.
    pub formulas: Vec<String>,
    pub settings: Settings,
    pub metrics: BTreeMap<String, f64>,
    /// First failing case, when `passed` is false.
    pub counterexample: Option<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub p: Option<String>,
    pub t: Option<f64>,
    pub n: Option<usize>,
    pub initial_sites: Option<Vec<i64>>,
    pub initial_species: Option<Vec<u32>>,
    pub window: Option<[i64; 2]>,
    pub targets: Option<Vec<TargetSpec>>,
    pub quadrature: Option<QuadRecord>,
    pub passes: Vec<PassRecord>,
    pub oracle: Option<Value>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub points: Option<usize>,
    pub tolerance: Option<f64>,
    pub leak: Option<f64>,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct QuadRecord {
    pub radius: Option<f64>,
    pub nodes: Option<usize>,
    pub tol: f64,
    pub max_nodes: usize,
    pub safety: f64,
}

impl From<&QuadOptions> for QuadRecord {
    fn from(o: &QuadOptions) -> Self {
        Self { radius: o.radius, nodes: o.nodes, tol: o.tol, max_nodes: o.max_nodes, safety: o.safety }
    }
}

/// Contour actually used by one group of targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PassRecord {
    pub kind: String,
    pub radius: f64,
    pub nodes: usize,
    pub estimate: f64,
    pub converged: bool,
}

pub fn pass_records(e: &Evaluation) -> Vec<PassRecord> {
    e.passes
        .iter()
        .map(|p| PassRecord {
            kind: match p.kind {
                PassKind::Direct => "direct",
                PassKind::Reflected => "reflected",
                PassKind::Widened => "widened",
            }
            .to_string(),
            radius: p.contour.radius(),
            nodes: p.contour.nodes(),
            estimate: p.estimate,
            converged: p.converged,
        })
        .collect()
}

pub fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// One row per configuration; `prob`, `verify-delta` and `oracle` share it.
#[derive(Debug, Clone, Serialize)]
pub struct ProbabilityRow {
    pub sites: String,
    pub species: String,
    pub value: f64,
    pub imag: Option<f64>,
    pub estimate: Option<f64>,
    pub oracle: Option<f64>,
}

impl ProbabilityRow {
    pub fn new(c: &Configuration, value: f64) -> Self {
        Self { sites: join(c.sites()), species: join(c.species().labels()), value, imag: None, estimate: None, oracle: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramRow {
    pub sites: String,
    pub species: String,
    pub count: u64,
    pub frequency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub sites: String,
    pub species: String,
    pub observed: u64,
    pub expected: f64,
    pub z: f64,
}

pub enum Table {
    Probabilities(Vec<ProbabilityRow>),
    Histogram(Vec<HistogramRow>),
    Comparison(Vec<ComparisonRow>),
}

impl Table {
    fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let res = match self {
            Table::Probabilities(rows) => rows.iter().try_for_each(|r| w.serialize(r)),
            Table::Histogram(rows) => rows.iter().try_for_each(|r| w.serialize(r)),
            Table::Comparison(rows) => rows.iter().try_for_each(|r| w.serialize(r)),
        };
        res.and_then(|_| w.flush().map_err(csv::Error::from)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Result of one command: a report, an optional table and a summary for
/// standard output.
pub struct Outcome {
    pub report: Report,
    pub table: Option<Table>,
    /// Extra JSON artifacts as `(file name, document)`.
    pub artifacts: Vec<(String, Value)>,
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut text = serde_json::to_string_pretty(&self.report).expect("report serializes");
        text.push('\n');
        fs::write(dir.join("report.json"), text).map_err(io)?;
        if let Some(table) = &self.table {
            table.write_csv(&dir.join("table.csv"))?;
        }
        for (name, doc) in &self.artifacts {
            let mut text = serde_json::to_string_pretty(doc).expect("artifact serializes");
            text.push('\n');
            fs::write(dir.join(name), text).map_err(io)?;
        }
        Ok(())
    }
}

/// JSON Schemas of every input and output document, and the CSV column sets.
pub fn schema_document() -> Value {
    json!({
        "format": REPORT_FORMAT,
        "report": schema_for!(Report),
        "manifest": schema_for!(RunManifest),
        "problem": schema_for!(ProblemFile),
        "csv": {
            "probabilities": {
                "commands": ["prob", "verify-delta", "oracle"],
                "columns": ["sites", "species", "value", "imag", "estimate", "oracle"],
                "notes": "sites and species are space-separated; empty cells are absent values",
            },
            "histogram": {
                "commands": ["simulate"],
                "columns": ["sites", "species", "count", "frequency"],
            },
            "comparison": {
                "commands": ["compare"],
                "columns": ["sites", "species", "observed", "expected", "z"],
            },
        },
        "coefficients": {
            "commands": ["coeffs"],
            "file": "coeffs.json",
            "rows": {"sigma": "one-line permutation", "pi": "species labels", "value": "\"num/den\""},
        },
    })
}
