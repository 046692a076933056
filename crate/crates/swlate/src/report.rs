//! Report files: JSON documents, plain-text summaries, and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use swlate_core::bounds::BoundsReport;
use swlate_core::crossfit::{DiagnosticsReport, NuisancePredictions};
use swlate_core::dataset::StudySample;
use swlate_core::estimator::{normalized_weights, EstimateReport};
use swlate_core::simulation::{BoundsRecord, BoundsSummary, GroundTruth, LateRecord, ReplicationSummary};

use crate::error::{CliError, CliResult};

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("cannot write {}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Shortest round-trip text; NaN is left empty.
fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// One row per unit of study B with its held-out nuisance predictions.
pub fn write_unit_diagnostics(path: &Path, preds: &NuisancePredictions, b: &StudySample, weighted: bool) -> CliResult<()> {
    let wn = normalized_weights(preds, weighted);
    let header = ["unit", "fold", "z", "d", "y", "mu1", "mu0", "m1", "m0", "e_raw", "e", "eta_raw", "eta", "w", "w_normalized"];
    let rows = (0..b.len()).map(|i| {
        vec![
            (i + 1).to_string(),
            (preds.folds.fold_of(i) + 1).to_string(),
            b.instrument()[i].to_string(),
            b.treatment()[i].to_string(),
            num(b.outcome()[i]),
            num(preds.mu1[i]),
            num(preds.mu0[i]),
            num(preds.m1[i]),
            num(preds.m0[i]),
            num(preds.e_raw[i]),
            num(preds.e[i]),
            num(preds.eta_raw[i]),
            num(preds.eta[i]),
            num(preds.w[i]),
            num(wn[i]),
        ]
    });
    write_rows(path, &header, rows)
}

pub fn write_late_records(path: &Path, scenarios: &[(String, Vec<LateRecord>)]) -> CliResult<()> {
    let header = [
        "scenario",
        "rep",
        "seed",
        "ok",
        "error",
        "weighted_point",
        "weighted_se",
        "weighted_ci_lower",
        "weighted_ci_upper",
        "unweighted_point",
        "unweighted_se",
        "unweighted_ci_lower",
        "unweighted_ci_upper",
        "strength",
        "fallbacks",
    ];
    let rows = scenarios.iter().flat_map(|(name, recs)| {
        recs.iter().map(move |r| {
            vec![
                name.clone(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.ok.to_string(),
                r.error.clone(),
                num(r.weighted_point),
                num(r.weighted_se),
                num(r.weighted_ci_lower),
                num(r.weighted_ci_upper),
                num(r.unweighted_point),
                num(r.unweighted_se),
                num(r.unweighted_ci_lower),
                num(r.unweighted_ci_upper),
                num(r.strength),
                r.fallbacks.to_string(),
            ]
        })
    });
    write_rows(path, &header, rows)
}

pub fn write_bounds_records(path: &Path, scenarios: &[(String, Vec<BoundsRecord>)]) -> CliResult<()> {
    let header = [
        "scenario",
        "rep",
        "seed",
        "ok",
        "error",
        "weighted_lower",
        "weighted_upper",
        "weighted_lower_ci",
        "weighted_upper_ci",
        "unweighted_lower",
        "unweighted_upper",
        "unweighted_lower_ci",
        "unweighted_upper_ci",
    ];
    let rows = scenarios.iter().flat_map(|(name, recs)| {
        recs.iter().map(move |r| {
            vec![
                name.clone(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.ok.to_string(),
                r.error.clone(),
                num(r.weighted_lower),
                num(r.weighted_upper),
                num(r.weighted_lower_ci),
                num(r.weighted_upper_ci),
                num(r.unweighted_lower),
                num(r.unweighted_upper),
                num(r.unweighted_lower_ci),
                num(r.unweighted_upper_ci),
            ]
        })
    });
    write_rows(path, &header, rows)
}

const LATE_METRICS: [&str; 9] =
    ["mean_point", "percent_bias", "mc_se", "mean_model_se", "coverage", "replications", "failures", "flagged", "target"];

fn late_metrics(s: &ReplicationSummary) -> [String; 9] {
    [
        num(s.mean_point),
        num(s.percent_bias),
        num(s.mc_se),
        num(s.mean_model_se),
        num(s.coverage),
        s.replications.to_string(),
        s.failures.to_string(),
        s.flagged.to_string(),
        num(s.target),
    ]
}

const BOUNDS_METRICS: [&str; 9] =
    ["mean_lower", "mean_upper", "mean_width", "coverage", "ci_coverage", "replications", "failures", "flagged", "target_ate"];

fn bounds_metrics(s: &BoundsSummary) -> [String; 9] {
    [
        num(s.mean_lower),
        num(s.mean_upper),
        num(s.mean_width),
        num(s.coverage),
        num(s.ci_coverage),
        s.replications.to_string(),
        s.failures.to_string(),
        s.flagged.to_string(),
        num(s.target_ate),
    ]
}

/// One simulated scenario's results, weighted and unweighted side by side.
pub struct ScenarioRow<'a, S> {
    pub name: &'a str,
    pub strength: f64,
    pub truth: &'a GroundTruth,
    pub weighted: &'a S,
    pub unweighted: &'a S,
}

fn scenario_header(metrics: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "strength", "truth_late_a", "truth_late_b", "truth_ate_a", "truth_ate_b"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["weighted", "unweighted"] {
        h.extend(metrics.iter().map(|m| format!("{prefix}_{m}")));
    }
    h
}

fn scenario_prefix<S>(r: &ScenarioRow<'_, S>) -> Vec<String> {
    vec![
        r.name.to_string(),
        num(r.strength),
        num(r.truth.late_a),
        num(r.truth.late_b),
        num(r.truth.ate_a),
        num(r.truth.ate_b),
    ]
}

/// One row per scenario.
pub fn write_late_summaries(path: &Path, rows: &[ScenarioRow<'_, ReplicationSummary>]) -> CliResult<()> {
    let header = scenario_header(&LATE_METRICS);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = rows.iter().map(|r| {
        let mut row = scenario_prefix(r);
        row.extend(late_metrics(r.weighted));
        row.extend(late_metrics(r.unweighted));
        row
    });
    write_rows(path, &header, rows)
}

pub fn write_bounds_summaries(path: &Path, rows: &[ScenarioRow<'_, BoundsSummary>]) -> CliResult<()> {
    let header = scenario_header(&BOUNDS_METRICS);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = rows.iter().map(|r| {
        let mut row = scenario_prefix(r);
        row.extend(bounds_metrics(r.weighted));
        row.extend(bounds_metrics(r.unweighted));
        row
    });
    write_rows(path, &header, rows)
}

/// Per-scenario fit diagnostics for simulate mode.
pub fn write_simulation_diagnostics(path: &Path, rows: &[(String, usize, usize, f64, usize)]) -> CliResult<()> {
    let header = ["scenario", "replications", "failures", "mean_instrument_strength", "glm_fallbacks"];
    let rows = rows.iter().map(|(name, reps, failures, strength, fallbacks)| {
        vec![name.clone(), reps.to_string(), failures.to_string(), num(*strength), fallbacks.to_string()]
    });
    write_rows(path, &header, rows)
}

fn diagnostics_lines(out: &mut String, d: &DiagnosticsReport) {
    let _ = writeln!(out, "instrument strength  {:.4} (raw difference {:.4})", d.instrument_strength, d.raw_strength);
    let _ = writeln!(out, "clipped e(X)         {:.1}%", 100.0 * d.e_clipped_fraction);
    let _ = writeln!(out, "clipped eta(X)       {:.1}%", 100.0 * d.eta_clipped_fraction);
    let _ = writeln!(out, "weight CV            {:.3}", d.weight_cv);
    for w in &d.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
}

pub fn estimate_text(
    main: &EstimateReport,
    unweighted: Option<&EstimateReport>,
    study_a: Option<&EstimateReport>,
    diag: &DiagnosticsReport,
    n_a: Option<usize>,
) -> String {
    let mut out = String::new();
    let level = 100.0 * (1.0 - main.alpha);
    let label = if main.weighted { "SWLATE (weighted to study A)" } else { "LATE (study B, unweighted)" };
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "  estimate  {:.4}", main.point);
    let _ = writeln!(out, "  std error {:.4}", main.se);
    let _ = writeln!(out, "  {level:.0}% CI    [{:.4}, {:.4}]", main.ci_lower, main.ci_upper);
    let folds: Vec<String> = main.per_fold_points.iter().map(|p| format!("{p:.4}")).collect();
    let _ = writeln!(out, "  per fold  {}", folds.join(" "));
    if let Some(u) = unweighted {
        let _ = writeln!(out, "unweighted LATE in study B  {:.4} (SE {:.4}, CI [{:.4}, {:.4}])", u.point, u.se, u.ci_lower, u.ci_upper);
    }
    if let Some(a) = study_a {
        let _ = writeln!(out, "study A's own LATE          {:.4} (SE {:.4}, CI [{:.4}, {:.4}])", a.point, a.se, a.ci_lower, a.ci_upper);
    }
    match n_a {
        Some(n) => {
            let _ = writeln!(out, "n(A) = {n}, n(B) = {}", main.n_b);
        }
        None => {
            let _ = writeln!(out, "n(B) = {}", main.n_b);
        }
    }
    diagnostics_lines(&mut out, diag);
    out
}

pub fn bounds_text(main: &BoundsReport, unweighted: Option<&BoundsReport>, diag: &DiagnosticsReport) -> String {
    let mut out = String::new();
    let level = 100.0 * (1.0 - main.alpha);
    let label = if main.weighted { "ATE bounds (weighted to study A)" } else { "ATE bounds (study B, unweighted)" };
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "  lower  {:.4} (SE {:.4}, {level:.0}% CI [{:.4}, {:.4}])", main.lower.point, main.lower.se, main.lower.ci_lower, main.lower.ci_upper);
    let _ = writeln!(out, "  upper  {:.4} (SE {:.4}, {level:.0}% CI [{:.4}, {:.4}])", main.upper.point, main.upper.se, main.upper.ci_lower, main.upper.ci_upper);
    let _ = writeln!(out, "  width  {:.4}", main.width());
    let _ = writeln!(out, "on the [0, 1] outcome scale [{}, {}]:", main.scale.y_min, main.scale.y_max);
    let _ = writeln!(out, "  lower  {:.4} (SE {:.4})", main.lower_scaled.point, main.lower_scaled.se);
    let _ = writeln!(out, "  upper  {:.4} (SE {:.4})", main.upper_scaled.point, main.upper_scaled.se);
    if let Some(u) = unweighted {
        let _ = writeln!(out, "unweighted bounds in study B  [{:.4}, {:.4}]", u.lower.point, u.upper.point);
    }
    diagnostics_lines(&mut out, diag);
    out
}

pub fn truth_line(name: &str, t: &GroundTruth) -> String {
    format!(
        "{name}: LATE(A) {:.4}  LATE(B) {:.4}  ATE(A) {:.4}  ATE(B) {:.4}  complier share A {:.3} B {:.3}",
        t.late_a, t.late_b, t.ate_a, t.ate_b, t.complier_share_a, t.complier_share_b
    )
}

pub fn late_summary_line(name: &str, s: &ReplicationSummary) -> String {
    format!(
        "{name} {:<10} mean {:.4}  bias {:+.2}%  MC SE {:.4}  model SE {:.4}  coverage {:.3}  ({} ok, {} failed{})",
        s.estimator,
        s.mean_point,
        s.percent_bias,
        s.mc_se,
        s.mean_model_se,
        s.coverage,
        s.replications,
        s.failures,
        if s.flagged { ", FLAGGED" } else { "" }
    )
}

pub fn bounds_summary_line(name: &str, s: &BoundsSummary) -> String {
    format!(
        "{name} {:<10} bounds [{:.4}, {:.4}]  width {:.4}  coverage {:.3}  CI coverage {:.3}  ({} ok, {} failed{})",
        s.estimator,
        s.mean_lower,
        s.mean_upper,
        s.mean_width,
        s.coverage,
        s.ci_coverage,
        s.replications,
        s.failures,
        if s.flagged { ", FLAGGED" } else { "" }
    )
}
