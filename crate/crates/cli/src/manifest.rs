//! Input documents: run manifests, problem files and their conversion into
//! core types.

use std::path::PathBuf;

use asep_core::bethe::RateParams;
use asep_core::oracle::window_for;
use asep_core::scalar::parse_rational;
use asep_core::species::SpeciesMap;
use asep_core::transition::{Configuration, ProblemInstance, QuadOptions};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Prob,
    VerifyDelta,
    VerifyBraid,
    VerifyBClasses,
    VerifySecondClass,
    Oracle,
    Simulate,
    Compare,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Prob => "prob",
            CommandKind::VerifyDelta => "verify-delta",
            CommandKind::VerifyBraid => "verify-braid",
            CommandKind::VerifyBClasses => "verify-b-classes",
            CommandKind::VerifySecondClass => "verify-second-class",
            CommandKind::Oracle => "oracle",
            CommandKind::Simulate => "simulate",
            CommandKind::Compare => "compare",
        }
    }
}

/// A rate written as a number (`0.7`) or as an exact fraction (`"1/3"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Rate {
    Number(f64),
    Text(String),
}

impl Rate {
    pub fn to_f64(&self) -> Result<f64, CliError> {
        match self {
            Rate::Number(x) => Ok(*x),
            Rate::Text(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .or_else(|| parse_rational(s).and_then(|r| r.to_f64()))
                .ok_or_else(|| CliError::Input(format!("p: cannot parse {s:?} as a number or fraction"))),
        }
    }

    pub fn to_rational(&self) -> Result<BigRational, CliError> {
        let text = match self {
            Rate::Number(x) => x.to_string(),
            Rate::Text(s) => s.clone(),
        };
        if let Some(r) = parse_rational(&text) {
            return Ok(r);
        }
        text.trim()
            .parse::<f64>()
            .ok()
            .and_then(BigRational::from_float)
            .ok_or_else(|| CliError::Input(format!("p: cannot parse {text:?} as an exact rate")))
    }

    pub fn label(&self) -> String {
        match self {
            Rate::Number(x) => x.to_string(),
            Rate::Text(s) => s.trim().to_string(),
        }
    }
}

/// Initial data. Missing fields take command-specific defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(rename = "Y", default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Automatic radius as a fraction of the pole bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
}

impl QuadSpec {
    pub fn options(&self, default_tol: f64) -> QuadOptions {
        let d = QuadOptions::default();
        QuadOptions {
            radius: self.radius,
            nodes: self.nodes,
            tol: self.tol.unwrap_or(default_tol),
            safety: self.safety.unwrap_or(d.safety),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(rename = "X")]
    pub x: Vec<i64>,
    /// Defaults to the initial species map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    #[default]
    Formula,
    Oracle,
}

/// Quadrature, window, sampling and tolerance settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default)]
    pub quad: QuadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetSpec>>,
    /// Also evaluate the generator oracle (`prob`).
    #[serde(default)]
    pub oracle: bool,
    /// Leakage tolerance for automatic windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Random spectral points for the exact identity checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// End sites for `verify-b-classes`.
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceKind>,
}

/// One command with everything needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: CommandKind,
    #[serde(default)]
    pub instance: InstanceSpec,
    #[serde(default)]
    pub options: Options,
    /// Directory receiving `report.json` and, for tabular commands, `table.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Flat problem description accepted by `prob --problem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub p: Rate,
    pub t: f64,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(rename = "Y")]
    pub y: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[i64; 2]>,
    #[serde(default)]
    pub quad: QuadSpec,
    #[serde(default)]
    pub oracle: bool,
}

impl ProblemFile {
    pub fn into_manifest(self, out: Option<PathBuf>) -> RunManifest {
        RunManifest {
            command: CommandKind::Prob,
            instance: InstanceSpec { p: Some(self.p), t: Some(self.t), n: self.n, m: self.m, y: Some(self.y), nu: self.nu },
            options: Options { quad: self.quad, window: self.window, targets: self.targets, oracle: self.oracle, ..Options::default() },
            out,
        }
    }
}

/// Parses a JSON document, reporting the line and column of the first problem.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Input(format!("{what}: {e}")))
}

/// Fallbacks for fields an instance leaves out.
pub struct InstanceDefaults {
    pub p: Option<f64>,
    pub t: Option<f64>,
    pub n: usize,
}

impl InstanceSpec {
    /// Particle count from `Y`, `nu` or `N`; all given values must agree.
    pub fn particle_count(&self, default: usize) -> Result<usize, CliError> {
        let mut n = self.n;
        for (name, len) in [("Y", self.y.as_ref().map(Vec::len)), ("nu", self.nu.as_ref().map(Vec::len))] {
            if let Some(len) = len {
                match n {
                    Some(k) if k != len => {
                        return Err(CliError::Input(format!("{name}: has {len} entries but N = {k}")));
                    }
                    _ => n = Some(len),
                }
            }
        }
        let n = n.unwrap_or(default);
        if n == 0 {
            return Err(CliError::Input("N: need at least one particle".into()));
        }
        Ok(n)
    }

    pub fn rate(&self, default: Option<f64>) -> Result<Rate, CliError> {
        self.p.clone().or(default.map(Rate::Number)).ok_or_else(|| CliError::Input("p: missing".into()))
    }

    pub fn species(&self, n: usize) -> Result<SpeciesMap, CliError> {
        let labels = self.nu.clone().unwrap_or_else(|| vec![1; n]);
        let top = labels.iter().copied().max().unwrap_or(1);
        let m = self.m.unwrap_or(top);
        SpeciesMap::new(labels, m).map_err(|e| CliError::Input(format!("nu: {e}")))
    }

    pub fn resolve(&self, d: &InstanceDefaults) -> Result<ProblemInstance, CliError> {
        let n = self.particle_count(d.n)?;
        let sites = self.y.clone().unwrap_or_else(|| (0..n as i64).map(|i| 2 * i).collect());
        let species = self.species(n)?;
        let initial = Configuration::new(sites, species).map_err(|e| CliError::Input(format!("Y: {e}")))?;
        let p = self.rate(d.p)?.to_f64()?;
        let rates = RateParams::from_p(p).map_err(|e| CliError::Input(format!("p: {e}")))?;
        let t = self.t.or(d.t).ok_or_else(|| CliError::Input("t: missing".into()))?;
        ProblemInstance::new(initial, rates, t).map_err(|e| CliError::Input(format!("t: {e}")))
    }
}

impl TargetSpec {
    pub fn configuration(&self, inst: &ProblemInstance) -> Result<Configuration, CliError> {
        let species = match &self.pi {
            Some(labels) => SpeciesMap::try_from(labels.clone()).map_err(|e| CliError::Input(format!("pi: {e}")))?,
            None => inst.initial().species().clone(),
        };
        Configuration::new(self.x.clone(), species).map_err(|e| CliError::Input(format!("X: {e}")))
    }
}

impl Options {
    pub fn leak(&self) -> f64 {
        self.leak.unwrap_or(1e-10)
    }

    /// The explicit window, or the smallest one whose leakage is below `leak`.
    pub fn window_or_auto(&self, inst: &ProblemInstance) -> Result<(i64, i64), CliError> {
        match self.window {
            Some([lo, hi]) if lo <= hi => Ok((lo, hi)),
            Some([lo, hi]) => Err(CliError::Input(format!("window: [{lo}, {hi}] is empty"))),
            None => window_for(inst.initial(), inst.time(), self.leak()).map_err(|e| CliError::Input(format!("leak: {e}"))),
        }
    }
}
