//! Workflow execution: loads inputs, runs the requested analysis, writes reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use swlate_core::bounds::{bounds_with_predictions, BoundsReport};
use swlate_core::crossfit::{cross_fit, diagnostics, CrossfitPlan, DiagnosticsReport};
use swlate_core::dataset::{Study, StudySample};
use swlate_core::estimator::{swlate, EstimateReport};
use swlate_core::math::mean;
use swlate_core::simulation::{
    calibrate, cohort_split, ground_truth_late, run_bounds_replication, run_late_replication, standardized_mean_differences,
    summarize_bounds, summarize_late, Analysis, BoundsSummary, Calibration, CalibratedDgm, DgmSpec, GroundTruth, Linearity,
    ReplicationSummary, SimulationConfig,
};

use crate::config::{issues_to_error, Mode, RunConfig};
use crate::data::{load_csv, load_target_csv, write_csv, ColumnMapping};
use crate::error::{CliError, CliResult};
use crate::report::{self, ScenarioRow};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Contents of `summary.txt`.
    pub summary: String,
}

/// Common wrapper of every `report.json`.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    tool_version: &'static str,
    mode: Mode,
    config: &'a RunConfig,
    result: T,
}

/// Fills in defaults that depend on the mode so the embedded config is
/// self-contained.
pub fn resolve(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    c.mode = Some(config.mode());
    c.crossfit.folds = Some(config.folds());
    if matches!(c.mode(), Mode::Simulate | Mode::GenData) {
        let mut sim = c.simulation.take().unwrap_or_default();
        sim.dgm.seed = c.seed;
        c.simulation = Some(sim);
    }
    c
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn report<T: Serialize>(&mut self, config: &RunConfig, result: T) -> CliResult<()> {
        let env = Envelope {
            schema_version: crate::config::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            mode: config.mode(),
            config,
            result,
        };
        let p = self.path("report.json");
        report::write_json(&p, &env)
    }

    fn finish(mut self, summary: String) -> CliResult<RunOutput> {
        let p = self.path("summary.txt");
        report::write_text(&p, &summary)?;
        Ok(RunOutput { dir: self.dir, files: self.files, summary })
    }
}

/// Runs one workflow. `threads` sizes the replication pool in simulate mode
/// (`None` uses all cores); it never affects results.
pub fn run(config: &RunConfig, threads: Option<usize>) -> CliResult<RunOutput> {
    let issues = config.validate();
    if !issues.is_empty() {
        return Err(issues_to_error(&issues));
    }
    let config = resolve(config);
    match config.mode() {
        Mode::Estimate => run_estimate(&config),
        Mode::Bounds => run_bounds(&config),
        Mode::Simulate => run_simulate(&config, threads),
        Mode::GenData => run_gen_data(&config),
        Mode::CohortSplit => run_cohort_split(&config),
    }
}

struct Inputs {
    mapping: ColumnMapping,
    a: Option<StudySample>,
    a_has_outcomes: bool,
    b: StudySample,
}

fn load_inputs(config: &RunConfig) -> CliResult<Inputs> {
    let mapping = config.mapping.as_ref().ok_or_else(|| CliError::config("mapping: required in this mode"))?.resolve()?;
    let b_path = config.study_b.as_ref().ok_or_else(|| CliError::config("study_b: required in this mode"))?;
    let b = load_csv(b_path, &mapping, Study::B)?;
    let (a, a_has_outcomes) = match &config.study_a {
        Some(p) => {
            let (a, full) = load_target_csv(p, &mapping)?;
            (Some(a), full)
        }
        None => (None, false),
    };
    if config.compare_a && !a_has_outcomes {
        return Err(CliError::data("compare_a needs instrument, treatment, and outcome columns in study A"));
    }
    Ok(Inputs { mapping, a, a_has_outcomes, b })
}

#[derive(Serialize)]
struct EstimateResult<'a> {
    plan: &'a CrossfitPlan,
    n_a: Option<usize>,
    n_b: usize,
    covariates: &'a [String],
    estimate: &'a EstimateReport,
    /// Study B's unweighted LATE from the same nuisance fits.
    unweighted: Option<&'a EstimateReport>,
    /// Study A's own LATE, when requested.
    study_a_late: Option<&'a EstimateReport>,
    diagnostics: &'a DiagnosticsReport,
}

fn run_estimate(config: &RunConfig) -> CliResult<RunOutput> {
    let inputs = load_inputs(config)?;
    let plan = config.plan()?;
    let a_for_weights = if config.weighted { inputs.a.as_ref() } else { None };
    let preds = cross_fit(a_for_weights, &inputs.b, &plan)?;
    let main = swlate(&preds, &inputs.b, config.alpha, config.weighted)?;
    let unweighted = if config.weighted { Some(swlate(&preds, &inputs.b, config.alpha, false)?) } else { None };
    let study_a_late = match (&inputs.a, config.compare_a) {
        (Some(a), true) => {
            let pa = cross_fit(None, a, &plan).map_err(|e| CliError::from(e.context("study A")))?;
            Some(swlate(&pa, a, config.alpha, false).map_err(|e| CliError::from(e.context("study A")))?)
        }
        _ => None,
    };
    let diag = diagnostics(&preds, &inputs.b);

    let mut w = Writer::new(&config.out)?;
    w.report(
        config,
        EstimateResult {
            plan: &plan,
            n_a: inputs.a.as_ref().map(StudySample::len),
            n_b: inputs.b.len(),
            covariates: &inputs.mapping.covariates,
            estimate: &main,
            unweighted: unweighted.as_ref(),
            study_a_late: study_a_late.as_ref(),
            diagnostics: &diag,
        },
    )?;
    let p = w.path("diagnostics.csv");
    report::write_unit_diagnostics(&p, &preds, &inputs.b, config.weighted)?;
    let summary = report::estimate_text(&main, unweighted.as_ref(), study_a_late.as_ref(), &diag, inputs.a.as_ref().map(StudySample::len));
    w.finish(summary)
}

#[derive(Serialize)]
struct BoundsResult<'a> {
    plan: &'a CrossfitPlan,
    n_a: Option<usize>,
    n_b: usize,
    covariates: &'a [String],
    bounds: &'a BoundsReport,
    unweighted: Option<&'a BoundsReport>,
    diagnostics: &'a DiagnosticsReport,
}

fn run_bounds(config: &RunConfig) -> CliResult<RunOutput> {
    let inputs = load_inputs(config)?;
    let plan = config.plan()?;
    let a_for_weights = if config.weighted { inputs.a.as_ref() } else { None };
    let preds = cross_fit(a_for_weights, &inputs.b, &plan)?;
    // A covariates-only target file carries no outcomes to widen the scale.
    let a_for_scale = if inputs.a_has_outcomes { inputs.a.as_ref() } else { None };
    let spec = &plan.learners.outcome;
    let bound = |weighted| {
        bounds_with_predictions(a_for_scale, &inputs.b, &preds, spec, plan.seed, config.alpha, weighted, config.scaling)
    };
    let main = bound(config.weighted)?;
    let unweighted = if config.weighted { Some(bound(false)?) } else { None };
    let diag = diagnostics(&preds, &inputs.b);

    let mut w = Writer::new(&config.out)?;
    w.report(
        config,
        BoundsResult {
            plan: &plan,
            n_a: inputs.a.as_ref().map(StudySample::len),
            n_b: inputs.b.len(),
            covariates: &inputs.mapping.covariates,
            bounds: &main,
            unweighted: unweighted.as_ref(),
            diagnostics: &diag,
        },
    )?;
    let p = w.path("diagnostics.csv");
    report::write_unit_diagnostics(&p, &preds, &inputs.b, config.weighted)?;
    let summary = report::bounds_text(&main, unweighted.as_ref(), &diag);
    w.finish(summary)
}

fn scenario_name(spec: &DgmSpec) -> String {
    let lin = match spec.linearity {
        Linearity::Linear => "linear",
        Linearity::Nonlinear => "nonlinear",
    };
    if spec.perfect_compliance {
        format!("{lin}-perfect")
    } else {
        format!("{lin}-{}", spec.strength)
    }
}

#[derive(Serialize)]
struct ScenarioReport {
    name: String,
    spec: DgmSpec,
    calibration: Calibration,
    truth: GroundTruth,
    weighted: Summary,
    unweighted: Summary,
    mean_instrument_strength: f64,
    glm_fallbacks: usize,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Summary {
    Late(ReplicationSummary),
    Bounds(BoundsSummary),
}

#[derive(Serialize)]
struct SimulateResult<'a> {
    plan: &'a CrossfitPlan,
    analysis: Analysis,
    reps: usize,
    scenarios: Vec<ScenarioReport>,
}

fn build_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))
}

fn run_simulate(config: &RunConfig, threads: Option<usize>) -> CliResult<RunOutput> {
    let sim = config.simulation.clone().unwrap_or_default();
    let plan = config.plan()?;
    let sim_config = SimulationConfig { plan: plan.clone(), alpha: config.alpha, analysis: sim.analysis, scaling: sim.scaling };
    let strengths = sim.strengths.clone().unwrap_or_else(|| vec![sim.dgm.strength]);
    let pool = build_pool(threads)?;

    let mut scenarios = Vec::new();
    let mut late_records = Vec::new();
    let mut bounds_records = Vec::new();
    let mut text = String::new();
    for &s in &strengths {
        let spec = DgmSpec { strength: s, ..sim.dgm.clone() };
        let name = scenario_name(&spec);
        log::info!("scenario {name}: calibrating and computing ground truth");
        let dgm: CalibratedDgm = calibrate(&spec)?;
        let truth = ground_truth_late(&dgm, sim.truth_reps)?;
        let _ = writeln!(text, "{}", report::truth_line(&name, &truth));
        log::info!("scenario {name}: {} replications", sim.reps);
        let scenario = match sim.analysis {
            Analysis::Late => {
                let recs: Vec<_> = pool.install(|| (0..sim.reps).into_par_iter().map(|r| run_late_replication(&dgm, &sim_config, r)).collect());
                let ws = summarize_late(&recs, true, truth.late_a);
                let us = summarize_late(&recs, false, truth.late_a);
                check_replications(&name, ws.replications)?;
                let _ = writeln!(text, "{}", report::late_summary_line(&name, &ws));
                let _ = writeln!(text, "{}", report::late_summary_line(&name, &us));
                let ok: Vec<f64> = recs.iter().filter(|r| r.ok).map(|r| r.strength).collect();
                let fallbacks = recs.iter().map(|r| r.fallbacks).sum();
                late_records.push((name.clone(), recs));
                ScenarioReport {
                    name,
                    spec,
                    calibration: dgm.calibration,
                    truth,
                    weighted: Summary::Late(ws),
                    unweighted: Summary::Late(us),
                    mean_instrument_strength: mean(&ok),
                    glm_fallbacks: fallbacks,
                }
            }
            Analysis::Bounds => {
                let recs: Vec<_> = pool.install(|| (0..sim.reps).into_par_iter().map(|r| run_bounds_replication(&dgm, &sim_config, r)).collect());
                // study A's covariates have mean zero, so its ATE is the main effect
                let ate = spec.beta[0];
                let ws = summarize_bounds(&recs, true, ate);
                let us = summarize_bounds(&recs, false, ate);
                check_replications(&name, ws.replications)?;
                let _ = writeln!(text, "{}", report::bounds_summary_line(&name, &ws));
                let _ = writeln!(text, "{}", report::bounds_summary_line(&name, &us));
                bounds_records.push((name.clone(), recs));
                ScenarioReport {
                    name,
                    spec,
                    calibration: dgm.calibration,
                    truth,
                    weighted: Summary::Bounds(ws),
                    unweighted: Summary::Bounds(us),
                    mean_instrument_strength: f64::NAN,
                    glm_fallbacks: 0,
                }
            }
        };
        scenarios.push(scenario);
    }

    let mut w = Writer::new(&config.out)?;
    let p = w.path("replications.csv");
    match sim.analysis {
        Analysis::Late => report::write_late_records(&p, &late_records)?,
        Analysis::Bounds => report::write_bounds_records(&p, &bounds_records)?,
    }
    let p = w.path("summary.csv");
    match sim.analysis {
        Analysis::Late => {
            let rows: Vec<ScenarioRow<'_, ReplicationSummary>> = scenarios
                .iter()
                .filter_map(|s| match (&s.weighted, &s.unweighted) {
                    (Summary::Late(ws), Summary::Late(us)) => {
                        Some(ScenarioRow { name: &s.name, strength: s.spec.strength, truth: &s.truth, weighted: ws, unweighted: us })
                    }
                    _ => None,
                })
                .collect();
            report::write_late_summaries(&p, &rows)?;
        }
        Analysis::Bounds => {
            let rows: Vec<ScenarioRow<'_, BoundsSummary>> = scenarios
                .iter()
                .filter_map(|s| match (&s.weighted, &s.unweighted) {
                    (Summary::Bounds(ws), Summary::Bounds(us)) => {
                        Some(ScenarioRow { name: &s.name, strength: s.spec.strength, truth: &s.truth, weighted: ws, unweighted: us })
                    }
                    _ => None,
                })
                .collect();
            report::write_bounds_summaries(&p, &rows)?;
        }
    }
    let diag_rows: Vec<_> = scenarios
        .iter()
        .map(|s| {
            let (reps, failures) = match &s.weighted {
                Summary::Late(x) => (x.replications, x.failures),
                Summary::Bounds(x) => (x.replications, x.failures),
            };
            (s.name.clone(), reps, failures, s.mean_instrument_strength, s.glm_fallbacks)
        })
        .collect();
    let p = w.path("diagnostics.csv");
    report::write_simulation_diagnostics(&p, &diag_rows)?;
    w.report(config, SimulateResult { plan: &plan, analysis: sim.analysis, reps: sim.reps, scenarios })?;
    w.finish(text)
}

fn check_replications(name: &str, ok: usize) -> CliResult<()> {
    if ok == 0 {
        return Err(CliError::estimation(format!("scenario {name}: every replication failed; see replications.csv")));
    }
    Ok(())
}

#[derive(Serialize)]
struct GenDataResult {
    spec: DgmSpec,
    calibration: Calibration,
    n_a: usize,
    n_b: usize,
    /// Complier LATE and ATE of the drawn units.
    sample_late_a: Option<f64>,
    sample_late_b: Option<f64>,
    sample_ate_a: f64,
    sample_ate_b: f64,
}

fn run_gen_data(config: &RunConfig) -> CliResult<RunOutput> {
    let sim = config.simulation.clone().unwrap_or_default();
    let dgm = calibrate(&sim.dgm)?;
    let cohorts = dgm.gen_cohorts_seeded(config.seed)?;
    let covs = cohorts.a.sample.covariate_names().to_vec();

    let mut w = Writer::new(&config.out)?;
    let p = w.path("study_a.csv");
    write_csv(&cohorts.a.sample, &p)?;
    let p = w.path("study_b.csv");
    write_csv(&cohorts.b.sample, &p)?;
    let p = w.path("mapping.txt");
    report::write_text(&p, &ColumnMapping::standard(&covs).to_text())?;
    let p = w.path("diagnostics.csv");
    write_strata(&p, &cohorts)?;
    let result = GenDataResult {
        spec: dgm.spec.clone(),
        calibration: dgm.calibration,
        n_a: cohorts.a.sample.len(),
        n_b: cohorts.b.sample.len(),
        sample_late_a: dgm.complier_late(&cohorts.a),
        sample_late_b: dgm.complier_late(&cohorts.b),
        sample_ate_a: dgm.cohort_ate(&cohorts.a),
        sample_ate_b: dgm.cohort_ate(&cohorts.b),
    };
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let summary = format!(
        "simulated cohorts ({})\nstudy A: {} rows, complier LATE {}, ATE {:.4}\nstudy B: {} rows, complier LATE {}, ATE {:.4}\n",
        swlate_core::simulation::describe(&dgm.spec),
        result.n_a,
        fmt(result.sample_late_a),
        result.sample_ate_a,
        result.n_b,
        fmt(result.sample_late_b),
        result.sample_ate_b
    );
    w.report(config, result)?;
    w.finish(summary)
}

fn write_strata(path: &Path, c: &swlate_core::simulation::SimulatedCohorts) -> CliResult<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| report::io_error(path, e))?;
    let io = |e: csv::Error| report::io_error(path, e);
    wr.write_record(["study", "unit", "stratum", "compliance_prob"]).map_err(io)?;
    for (label, cohort) in [("A", &c.a), ("B", &c.b)] {
        for (i, (&s, &p)) in cohort.strata.iter().zip(&cohort.compliance_prob).enumerate() {
            let stratum = match s {
                swlate_core::simulation::COMPLIER => "complier",
                swlate_core::simulation::ALWAYS => "always-taker",
                _ => "never-taker",
            };
            wr.write_record([label.to_string(), (i + 1).to_string(), stratum.to_string(), p.to_string()]).map_err(io)?;
        }
    }
    wr.flush().map_err(|e| report::io_error(path, e))
}

#[derive(Serialize)]
struct CohortSplitResult<'a> {
    input: &'a Path,
    n: usize,
    intercept: f64,
    slopes: &'a [f64],
    covariates: &'a [String],
    standardized_mean_differences: &'a [f64],
}

fn run_cohort_split(config: &RunConfig) -> CliResult<RunOutput> {
    let cs = config.cohort_split.as_ref().ok_or_else(|| CliError::config("cohort_split: required in cohort-split mode"))?;
    let mapping = config.mapping.as_ref().ok_or_else(|| CliError::config("mapping: required in this mode"))?.resolve()?;
    let slopes = cs
        .coefficients
        .resolve(&mapping.covariates)
        .map_err(|p| CliError::config(format!("cohort_split.coefficients: {}", p.join("; "))))?;
    let sample = load_csv(&cs.input, &mapping, Study::A)?;
    let (target, current) = cohort_split(&sample, cs.intercept, &slopes, config.seed)?;
    let smd = standardized_mean_differences(&target, &current)?;

    let mut w = Writer::new(&config.out)?;
    let p = w.path("study_a.csv");
    write_csv(&target, &p)?;
    let p = w.path("study_b.csv");
    write_csv(&current, &p)?;
    let p = w.path("mapping.txt");
    report::write_text(&p, &ColumnMapping::standard(&mapping.covariates).to_text())?;
    let p = w.path("diagnostics.csv");
    {
        let mut wr = csv::Writer::from_path(&p).map_err(|e| report::io_error(&p, e))?;
        wr.write_record(["covariate", "mean_a", "mean_b", "smd"]).map_err(|e| report::io_error(&p, e))?;
        for (j, name) in mapping.covariates.iter().enumerate() {
            let ma = mean(&target.covariates().col(j));
            let mb = mean(&current.covariates().col(j));
            wr.write_record([name.clone(), ma.to_string(), mb.to_string(), smd[j].to_string()])
                .map_err(|e| report::io_error(&p, e))?;
        }
        wr.flush().map_err(|e| report::io_error(&p, e))?;
    }
    let mut summary = format!("target cohort (A): {} rows; current cohort (B): {} rows drawn with replacement\n", target.len(), current.len());
    for (name, d) in mapping.covariates.iter().zip(&smd) {
        let _ = writeln!(summary, "  SMD {name:<12} {d:+.3}");
    }
    w.report(
        config,
        CohortSplitResult {
            input: &cs.input,
            n: sample.len(),
            intercept: cs.intercept,
            slopes: &slopes,
            covariates: &mapping.covariates,
            standardized_mean_differences: &smd,
        },
    )?;
    w.finish(summary)
}
