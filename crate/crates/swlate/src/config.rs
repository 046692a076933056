//! Run configuration: JSON schema, defaults, and whole-file validation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use swlate_core::bounds::Scaling;
use swlate_core::crossfit::{ClipBounds, CrossfitPlan, NuisanceLearners};
use swlate_core::learners::LearnerSpec;
use swlate_core::simulation::{Analysis, DgmSpec};

use crate::data::ColumnMapping;
use crate::error::{CliError, CliResult};
use crate::presets;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Estimate,
    Bounds,
    Simulate,
    CohortSplit,
    GenData,
}

impl Mode {
    pub fn default_folds(self) -> usize {
        match self {
            Mode::Simulate => 4,
            _ => 5,
        }
    }
}

/// A column mapping given inline or as a path to a key-value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MappingSource {
    Inline(ColumnMapping),
    File(PathBuf),
}

impl MappingSource {
    pub fn resolve(&self) -> CliResult<ColumnMapping> {
        match self {
            MappingSource::Inline(m) => {
                m.check().map_err(CliError::config)?;
                Ok(m.clone())
            }
            MappingSource::File(p) => ColumnMapping::read(p),
        }
    }
}

/// Either a preset name (`glm`, `ensemble`, `forest`) or one spec per nuisance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearnersConfig {
    Preset(String),
    Custom(NuisanceLearners),
}

impl Default for LearnersConfig {
    fn default() -> Self {
        LearnersConfig::Preset("glm".into())
    }
}

impl LearnersConfig {
    pub fn resolve(&self) -> CliResult<NuisanceLearners> {
        match self {
            LearnersConfig::Preset(name) => presets::learners(name).ok_or_else(|| {
                CliError::config(format!("unknown learner preset `{name}` (expected one of {})", presets::NAMES.join(", ")))
            }),
            LearnersConfig::Custom(l) => Ok(l.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CrossfitConfig {
    /// Defaults to 5, or 4 in simulate mode.
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub learners: LearnersConfig,
    #[serde(default)]
    pub clip_e: ClipBounds,
    #[serde(default)]
    pub clip_eta: ClipBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub dgm: DgmSpec,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_analysis")]
    pub analysis: Analysis,
    /// Draws used to compute the ground-truth LATEs.
    #[serde(default = "default_truth_reps")]
    pub truth_reps: usize,
    /// Optional sweep over complier shares; each entry is one scenario.
    #[serde(default)]
    pub strengths: Option<Vec<f64>>,
    #[serde(default = "default_sim_scaling")]
    pub scaling: Scaling,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dgm: DgmSpec::default(),
            reps: default_reps(),
            analysis: default_analysis(),
            truth_reps: default_truth_reps(),
            strengths: None,
            scaling: default_sim_scaling(),
        }
    }
}

fn default_reps() -> usize {
    100
}
fn default_analysis() -> Analysis {
    Analysis::Late
}
fn default_truth_reps() -> usize {
    5000
}
fn default_sim_scaling() -> Scaling {
    Scaling::Raw
}

/// Sampling-logit slopes, in mapped covariate order or keyed by covariate name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    List(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

impl Coefficients {
    /// Slopes aligned with `covariates`.
    pub fn resolve(&self, covariates: &[String]) -> Result<Vec<f64>, Vec<String>> {
        match self {
            Coefficients::List(v) if v.len() == covariates.len() => Ok(v.clone()),
            Coefficients::List(v) => Err(vec![format!("{} slopes given for {} mapped covariates", v.len(), covariates.len())]),
            Coefficients::Named(map) => {
                let mut problems: Vec<String> = covariates
                    .iter()
                    .filter(|c| !map.contains_key(*c))
                    .map(|c| format!("no slope for covariate `{c}`"))
                    .collect();
                problems.extend(map.keys().filter(|k| !covariates.contains(k)).map(|k| format!("`{k}` is not a mapped covariate")));
                if problems.is_empty() {
                    Ok(covariates.iter().map(|c| map[c]).collect())
                } else {
                    Err(problems)
                }
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Coefficients::List(v) => v.is_empty(),
            Coefficients::Named(m) => m.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSplitSection {
    pub input: PathBuf,
    #[serde(default)]
    pub intercept: f64,
    pub coefficients: Coefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub study_a: Option<PathBuf>,
    #[serde(default)]
    pub study_b: Option<PathBuf>,
    #[serde(default)]
    pub mapping: Option<MappingSource>,
    #[serde(default)]
    pub crossfit: CrossfitConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub weighted: bool,
    /// Also estimate study A's own unweighted LATE (needs A's outcomes).
    #[serde(default)]
    pub compare_a: bool,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub cohort_split: Option<CohortSplitSection>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("swlate-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// One schema violation, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub fn issues_to_error(issues: &[ConfigIssue]) -> CliError {
    CliError::config(issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
}

impl RunConfig {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Estimate)
    }

    pub fn folds(&self) -> usize {
        self.crossfit.folds.unwrap_or_else(|| self.mode().default_folds())
    }

    pub fn plan(&self) -> CliResult<CrossfitPlan> {
        Ok(CrossfitPlan {
            k: self.folds(),
            learners: self.crossfit.learners.resolve()?,
            clip_e: self.crossfit.clip_e,
            clip_eta: self.crossfit.clip_eta,
            seed: self.seed,
        })
    }

    /// Checks mode requirements and value ranges, reporting every problem.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| issues.push(ConfigIssue { path: path.into(), message });
        if self.schema_version != SCHEMA_VERSION {
            push("schema_version", format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            push("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.folds() < 2 {
            push("crossfit.folds", format!("must be at least 2, got {}", self.folds()));
        }
        for (path, c) in [("crossfit.clip_e", self.crossfit.clip_e), ("crossfit.clip_eta", self.crossfit.clip_eta)] {
            if !(c.lo > 0.0 && c.lo < c.hi && c.hi < 1.0) {
                push(path, format!("must satisfy 0 < lo < hi < 1, got ({}, {})", c.lo, c.hi));
            }
        }
        match self.crossfit.learners.resolve() {
            Ok(l) => {
                for (name, spec) in [("outcome", &l.outcome), ("treatment", &l.treatment), ("instrument", &l.instrument), ("sampling", &l.sampling)] {
                    if let Err(e) = spec.validate() {
                        push(&format!("crossfit.learners.{name}"), e.message().to_string());
                    }
                }
            }
            Err(e) => push("crossfit.learners", e.message),
        }
        let mode = self.mode();
        let needs_data = matches!(mode, Mode::Estimate | Mode::Bounds);
        if needs_data {
            if self.study_b.is_none() {
                push("study_b", "required in this mode".into());
            }
            if self.weighted && self.study_a.is_none() {
                push("study_a", "required for weighted estimation".into());
            }
            if self.compare_a && self.study_a.is_none() {
                push("study_a", "required when compare_a is set".into());
            }
        }
        if needs_data || mode == Mode::CohortSplit {
            match &self.mapping {
                None => push("mapping", "required in this mode (instrument, treatment, outcome, covariates)".into()),
                Some(MappingSource::Inline(m)) => {
                    for (field, v) in [("instrument", &m.instrument), ("treatment", &m.treatment), ("outcome", &m.outcome)] {
                        if v.trim().is_empty() {
                            push(&format!("mapping.{field}"), "must name a column".into());
                        }
                    }
                    if let Err(msg) = m.check() {
                        push("mapping", msg);
                    }
                }
                Some(MappingSource::File(_)) => {}
            }
        }
        if let Scaling::Fixed { y_min, y_max } = self.scaling {
            if !(y_max > y_min) {
                push("scaling", format!("fixed scale needs y_min < y_max, got ({y_min}, {y_max})"));
            }
        }
        if mode == Mode::Simulate || mode == Mode::GenData {
            let sim = self.simulation.clone().unwrap_or_default();
            if mode == Mode::Simulate && sim.reps < 2 {
                push("simulation.reps", format!("must be at least 2, got {}", sim.reps));
            }
            if sim.truth_reps < 1 {
                push("simulation.truth_reps", "must be at least 1".into());
            }
            if let Some(list) = &sim.strengths {
                if list.is_empty() {
                    push("simulation.strengths", "must not be empty when given".into());
                }
                for (i, s) in list.iter().enumerate() {
                    if !(*s > 0.0 && *s < 1.0) {
                        push(&format!("simulation.strengths[{i}]"), format!("must lie in (0, 1), got {s}"));
                    }
                }
            }
            if let Err(e) = sim.dgm.validate() {
                push("simulation.dgm", e.message().to_string());
            }
        }
        if mode == Mode::CohortSplit {
            match &self.cohort_split {
                None => push("cohort_split", "required in cohort-split mode".into()),
                Some(cs) => {
                    if cs.coefficients.is_empty() {
                        push("cohort_split.coefficients", "must give one slope per covariate".into());
                    }
                    if let Some(MappingSource::Inline(m)) = &self.mapping {
                        if let Err(problems) = cs.coefficients.resolve(&m.covariates) {
                            for p in problems {
                                push("cohort_split.coefficients", p);
                            }
                        }
                    }
                }
            }
        }
        issues
    }
}

fn type_issues(v: &Value) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    let Some(obj) = v.as_object() else {
        return vec![ConfigIssue { path: "$".into(), message: "config must be a JSON object".into() }];
    };
    let mut expect = |path: &str, ok: bool, what: &str| {
        if !ok {
            issues.push(ConfigIssue { path: path.into(), message: format!("must be {what}") });
        }
    };
    if let Some(a) = obj.get("alpha") {
        expect("alpha", a.is_number(), "a number");
        if let Some(x) = a.as_f64() {
            expect("alpha", x > 0.0 && x < 1.0, "in (0, 1)");
        }
    }
    if let Some(s) = obj.get("seed") {
        expect("seed", s.is_u64(), "a non-negative integer");
    }
    if let Some(w) = obj.get("weighted") {
        expect("weighted", w.is_boolean(), "true or false");
    }
    if let Some(m) = obj.get("mode") {
        let ok = m.as_str().is_some_and(|s| matches!(s, "estimate" | "bounds" | "simulate" | "cohort-split" | "gen-data"));
        expect("mode", ok, "one of estimate, bounds, simulate, cohort-split, gen-data");
    }
    if let Some(cf) = obj.get("crossfit").and_then(Value::as_object) {
        if let Some(k) = cf.get("folds") {
            expect("crossfit.folds", k.as_u64().is_some_and(|k| k >= 2), "an integer of at least 2");
        }
    }
    if let Some(m) = obj.get("mapping").and_then(Value::as_object) {
        for field in ["instrument", "treatment", "outcome"] {
            expect(&format!("mapping.{field}"), m.get(field).is_some_and(Value::is_string), "a column name");
        }
        expect("mapping.covariates", m.get("covariates").is_some_and(Value::is_array), "a list of column names");
    }
    if let Some(sim) = obj.get("simulation").and_then(Value::as_object) {
        if let Some(r) = sim.get("reps") {
            expect("simulation.reps", r.as_u64().is_some_and(|r| r >= 2), "an integer of at least 2");
        }
        if let Some(s) = sim.get("dgm").and_then(|d| d.get("strength")) {
            expect("simulation.dgm.strength", s.as_f64().is_some_and(|s| s > 0.0 && s < 1.0), "a number in (0, 1)");
        }
    }
    issues
}

/// Parses a config document, checking types but not mode requirements.
pub fn parse_config_unchecked(text: &str) -> Result<RunConfig, Vec<ConfigIssue>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| vec![ConfigIssue { path: "$".into(), message: format!("invalid JSON: {e}") }])?;
    let mut issues = type_issues(&value);
    match serde_json::from_value::<RunConfig>(value) {
        Ok(c) if issues.is_empty() => Ok(c),
        Ok(_) => Err(issues),
        Err(e) => {
            if issues.is_empty() {
                issues.push(ConfigIssue { path: "$".into(), message: e.to_string() });
            }
            Err(issues)
        }
    }
}

/// Parses and validates a config document, reporting all problems found
/// rather than the first. `mode` overrides the document's `mode` field.
pub fn parse_config(text: &str, mode: Option<Mode>) -> Result<RunConfig, Vec<ConfigIssue>> {
    let mut config = parse_config_unchecked(text)?;
    if let Some(m) = mode {
        config.mode = Some(m);
    }
    let mut issues = config.validate();
    dedup(&mut issues);
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(issues)
    }
}

fn dedup(issues: &mut Vec<ConfigIssue>) {
    let mut seen = std::collections::BTreeSet::new();
    issues.retain(|i| seen.insert((i.path.clone(), i.message.clone())));
}

pub fn validate_config(path: &Path) -> Result<RunConfig, Vec<ConfigIssue>> {
    let text = fs::read_to_string(path)
        .map_err(|e| vec![ConfigIssue { path: "$".into(), message: format!("cannot read {}: {e}", path.display()) }])?;
    parse_config(&text, None)
}

/// Learner override from the command line: a preset name or inline JSON.
pub fn parse_learners_flag(s: &str) -> CliResult<LearnersConfig> {
    let t = s.trim();
    if t.starts_with('{') {
        if let Ok(l) = serde_json::from_str::<NuisanceLearners>(t) {
            return Ok(LearnersConfig::Custom(l));
        }
        let spec: LearnerSpec = serde_json::from_str(t).map_err(|e| CliError::config(format!("--learners: {e}")))?;
        return Ok(LearnersConfig::Custom(NuisanceLearners::uniform(spec)));
    }
    let cfg = LearnersConfig::Preset(t.to_string());
    cfg.resolve()?;
    Ok(cfg)
}
