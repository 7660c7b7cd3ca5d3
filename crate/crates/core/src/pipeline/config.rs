//! Declarative run configuration: one TOML document plus `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::ThresholdRule;
use crate::error::{Error, Result};
use crate::geometry::{FfdLattice, HullParams};
use crate::latent::ModelKind;
use crate::optim::BoOptions;
use crate::problem::{ConstraintTolerances, PenaltySpec, ResistanceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub hull: HullParams,
    /// FFD lattices; the desk-scale bulb and hull lattices when absent.
    #[serde(default)]
    pub lattices: Option<Vec<FfdLattice>>,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityRule {
    /// Accept every sampled design.
    #[default]
    None,
    /// Redraw designs that violate the geometric constraints.
    Constraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub feasibility: FeasibilityRule,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            feasibility: FeasibilityRule::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Fixed latent dimension; chosen from `variance_threshold` when absent.
    pub k: Option<usize>,
    pub variance_threshold: f64,
    /// Largest K tried by the factor-analysis search.
    pub max_k: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ppca,
            k: None,
            variance_threshold: 0.99,
            max_k: 40,
            em_max_iter: 500,
            em_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub rule: ThresholdRule,
    /// Designs decoded from uniform latent draws for the exceedance comparison.
    pub uniform_samples: usize,
    /// Fresh draws from the model marginal for the chi-square diagnostic.
    pub marginal_samples: usize,
    pub bins: usize,
    /// Multiples of the latent box used for the distance-versus-scale sweep.
    pub scales: Vec<f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            rule: ThresholdRule::TukeyFence,
            uniform_samples: 2000,
            marginal_samples: 2000,
            bins: 40,
            scales: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub resistance: ResistanceSpec,
    pub tolerances: ConstraintTolerances,
    pub penalty: PenaltySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Direct,
    Bo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Bo => "bo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// The original FFD design variables.
    #[default]
    Full,
    /// Latent coordinates of the fitted model.
    Latent,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Full => "full",
            Space::Latent => "latent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub label: Option<String>,
    pub method: Method,
    pub space: Space,
    /// Penalize designs beyond the anomaly threshold (latent space only).
    pub anomaly: bool,
}

impl RunSpec {
    pub fn label(&self, model: ModelKind) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut s = format!("{}-{}", self.method.name(), self.space.name());
        if self.space == Space::Latent {
            s.push('-');
            s.push_str(model.name());
        }
        if self.anomaly {
            s.push_str("-guard");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub budget: usize,
    /// BO settings; its seed is replaced by the seed derived for each run.
    pub bo: BoOptions,
    pub runs: Vec<RunSpec>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            budget: 500,
            bo: BoOptions::default(),
            runs: vec![RunSpec::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Run labels to include; every completed run when empty.
    pub runs: Vec<String>,
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Apply one `path.to.key=value` override; numeric segments index arrays.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override path `{path}` has an empty segment")));
    }
    let value = parse_override_value(value.trim());
    let (last, parents) = keys.split_last().expect("split yields one segment");
    let mut cur = root;
    let mut walked = String::new();
    for key in parents {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(key);
        let entry = cur
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            toml::Value::Array(a) => {
                return Err(Error::Config(format!(
                    "{walked}: arrays of {} entries cannot be overridden by index",
                    a.len()
                )))
            }
            _ => return Err(Error::Config(format!("{walked}: not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse a document, apply overrides, then deserialize and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(one_line(e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", one_line(&e.into_inner().to_string())))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn lattices(&self) -> Vec<FfdLattice> {
        self.lattices
            .clone()
            .unwrap_or_else(|| crate::geometry::desk_lattices(&self.hull))
    }

    /// Field-level checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        let h = &self.hull;
        for (name, v) in [("hull.length", h.length), ("hull.beam", h.beam), ("hull.draft", h.draft)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(name, "must be positive");
            }
        }
        if h.stations < 3 || h.girth_points < 3 {
            return fail("hull.stations", "stations and girth_points must be at least 3");
        }
        if let Some(ls) = &self.lattices {
            if ls.is_empty() {
                return fail("lattices", "at least one lattice is required");
            }
            for (i, l) in ls.iter().enumerate() {
                l.validate()
                    .map_err(|e| Error::Config(format!("lattices.{i}: {e}")))?;
            }
        }
        if self.sample.n < 4 {
            return fail("sample.n", "must be at least 4");
        }
        let m = &self.model;
        if !(m.variance_threshold > 0.0 && m.variance_threshold <= 1.0) {
            return fail("model.variance_threshold", "must lie in (0, 1]");
        }
        if m.k == Some(0) {
            return fail("model.k", "must be positive");
        }
        if m.max_k == 0 {
            return fail("model.max_k", "must be positive");
        }
        if m.em_max_iter == 0 || !(m.em_tol > 0.0) {
            return fail("model.em_max_iter", "EM needs a positive iteration cap and tolerance");
        }
        let t = &self.threshold;
        if t.bins == 0 {
            return fail("threshold.bins", "must be positive");
        }
        if t.uniform_samples < 4 || t.marginal_samples < 4 {
            return fail("threshold.uniform_samples", "sample counts must be at least 4");
        }
        if t.scales.iter().any(|s| !(*s > 0.0)) {
            return fail("threshold.scales", "scales must be positive");
        }
        let p = &self.problem;
        if !(p.penalty.h >= 0.0 && p.penalty.psi > 0.0) {
            return fail("problem.penalty", "h must be non-negative and psi positive");
        }
        if p.resistance.projection_dim == 0 {
            return fail("problem.resistance.projection_dim", "must be positive");
        }
        let o = &self.optimize;
        if o.budget == 0 {
            return fail("optimize.budget", "must be positive");
        }
        if o.runs.is_empty() {
            return fail("optimize.runs", "at least one run is required");
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, r) in o.runs.iter().enumerate() {
            if r.anomaly && r.space != Space::Latent {
                return fail(&format!("optimize.runs.{i}.anomaly"), "the anomaly guard needs the latent space");
            }
            if r.anomaly && m.kind == ModelKind::Pca {
                return fail(&format!("optimize.runs.{i}.anomaly"), "PCA defines no density to guard with");
            }
            let label = r.label(m.kind);
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return fail(&format!("optimize.runs.{i}.label"), "use letters, digits, '-', '_' or '.'");
            }
            if !labels.insert(label.clone()) {
                return fail(&format!("optimize.runs.{i}.label"), &format!("duplicate run label `{label}`"));
            }
        }
        Ok(())
    }

    /// Labels of the configured runs, in order.
    pub fn run_labels(&self) -> Vec<String> {
        self.optimize.runs.iter().map(|r| r.label(self.model.kind)).collect()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
