//! Weighted bounds on the average treatment effect built from the same
//! cross-fitting machinery as the SWLATE estimator.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::crossfit::{check_propensities, cross_fit, cross_fit_arm_targets, CrossfitPlan, NuisancePredictions};
use crate::dataset::StudySample;
use crate::error::{bail, Result};
use crate::estimator::{normalized_weights, wald_quantile};
use crate::learners::LearnerSpec;
use crate::math::mean;

/// Bounds crossing by more than this are reported as an error.
pub const CROSSING_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub y_min: f64,
    pub y_max: f64,
}

impl OutcomeScale {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite() && y_max > y_min) {
            bail!(Argument, "outcome scale needs finite y_min < y_max, got ({y_min}, {y_max})");
        }
        Ok(OutcomeScale { y_min, y_max })
    }

    pub fn identity() -> Self {
        OutcomeScale { y_min: 0.0, y_max: 1.0 }
    }

    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn forward(&self, y: f64) -> f64 {
        ((y - self.y_min) / self.range()).clamp(0.0, 1.0)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        self.y_min + s * self.range()
    }

    /// Smallest scale covering every outcome in the given samples.
    pub fn auto(samples: &[&StudySample]) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in samples {
            for &y in s.outcome() {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        if !(hi > lo) {
            bail!(Validation, "outcome is constant (or empty); automatic scaling is undefined");
        }
        Ok(OutcomeScale { y_min: lo, y_max: hi })
    }
}

/// How outcomes are mapped before the bound targets are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Scaling {
    /// Min/max over study A and study B outcomes (study B alone without A).
    #[default]
    Auto,
    Fixed {
        y_min: f64,
        y_max: f64,
    },
    /// Outcomes are used as given, without the [0, 1] check.
    Raw,
}

/// Maps study B's outcome onto [0, 1], clamping values outside the scale.
pub fn scale_outcome(b: &StudySample, scale: &OutcomeScale) -> Result<StudySample> {
    b.with_outcome(b.outcome().iter().map(|&y| scale.forward(y)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VVariables {
    pub upper1: Vec<f64>,
    pub lower1: Vec<f64>,
    pub upper0: Vec<f64>,
    pub lower0: Vec<f64>,
}

fn v_unchecked(y: &[f64], d: &[u8]) -> VVariables {
    let mut v = VVariables {
        upper1: Vec::with_capacity(y.len()),
        lower1: Vec::with_capacity(y.len()),
        upper0: Vec::with_capacity(y.len()),
        lower0: Vec::with_capacity(y.len()),
    };
    for (&y, &d) in y.iter().zip(d) {
        let d = f64::from(d);
        v.upper1.push(y * d + 1.0 - d);
        v.lower1.push(y * d);
        v.upper0.push(y * (1.0 - d));
        v.lower0.push(y * (1.0 - d) + d);
    }
    v
}

/// Bound targets for an outcome already scaled to [0, 1].
pub fn v_variables(b: &StudySample) -> Result<VVariables> {
    if let Some(i) = b.outcome().iter().position(|y| !(0.0..=1.0).contains(y)) {
        bail!(Argument, "outcome {} at row {i} lies outside [0, 1]; scale the outcome first", b.outcome()[i]);
    }
    Ok(v_unchecked(b.outcome(), b.treatment()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Targets and held-out per-arm regressions for one side of the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundNuisance {
    pub target1: Vec<f64>,
    pub target0: Vec<f64>,
    pub v1: Vec<f64>,
    pub v0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideEstimate {
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl SideEstimate {
    fn rescaled(&self, slope: f64) -> Self {
        SideEstimate {
            point: self.point * slope,
            se: self.se * slope,
            ci_lower: self.ci_lower * slope,
            ci_upper: self.ci_upper * slope,
        }
    }
}

/// Per-unit uncentered influence function of one weighted bound.
pub fn phi_bound(preds: &NuisancePredictions, b: &StudySample, nuis: &BoundNuisance, weighted: bool) -> Result<Vec<f64>> {
    check_propensities(preds, b.len())?;
    let n = b.len();
    if [nuis.target1.len(), nuis.target0.len(), nuis.v1.len(), nuis.v0.len()].iter().any(|&l| l != n) {
        bail!(Argument, "bound nuisances must have one value per study B unit");
    }
    let wn = normalized_weights(preds, weighted);
    Ok((0..n)
        .map(|i| {
            let z = f64::from(b.instrument()[i]);
            let e = preds.e[i];
            let inner = z / e * (nuis.target1[i] - nuis.v1[i]) - (1.0 - z) / (1.0 - e) * (nuis.target0[i] - nuis.v0[i])
                + nuis.v1[i]
                - nuis.v0[i];
            wn[i] * inner
        })
        .collect())
}

/// One side of the bounds, in the units of the targets.
pub fn swate_bound(preds: &NuisancePredictions, b: &StudySample, nuis: &BoundNuisance, alpha: f64, weighted: bool) -> Result<SideEstimate> {
    let q = wald_quantile(alpha)?;
    let phi = phi_bound(preds, b, nuis, weighted)?;
    let point = mean(&phi);
    let sq: Vec<f64> = phi.iter().map(|p| (p - point) * (p - point)).collect();
    let se = libm::sqrt(mean(&sq) / b.len() as f64);
    Ok(SideEstimate { point, se, ci_lower: point - q * se, ci_upper: point + q * se })
}

/// Cross-fits the per-arm bound regressions for both sides over the folds of
/// `preds`. Both sides share one seed stream.
pub fn fit_bound_nuisances(
    b: &StudySample,
    v: VVariables,
    preds: &NuisancePredictions,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<(BoundNuisance, BoundNuisance)> {
    let (l1, l0) = cross_fit_arm_targets(b, &preds.folds, &v.lower1, &v.lower0, spec, seed)?;
    let (u1, u0) = cross_fit_arm_targets(b, &preds.folds, &v.upper1, &v.upper0, spec, seed)?;
    Ok((
        BoundNuisance { target1: v.lower1, target0: v.lower0, v1: l1, v0: l0 },
        BoundNuisance { target1: v.upper1, target0: v.upper0, v1: u1, v0: u0 },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Bounds in original outcome units.
    pub lower: SideEstimate,
    pub upper: SideEstimate,
    /// Bounds on the [0, 1] scale used for estimation.
    pub lower_scaled: SideEstimate,
    pub upper_scaled: SideEstimate,
    pub scale: OutcomeScale,
    pub scaling: Scaling,
    pub weighted: bool,
    pub alpha: f64,
    pub n_b: usize,
}

impl BoundsReport {
    pub fn width(&self) -> f64 {
        self.upper.point - self.lower.point
    }

    /// True if `value` lies within the point bounds.
    pub fn contains(&self, value: f64) -> bool {
        self.lower.point <= value && value <= self.upper.point
    }

    /// True if `value` lies within the union of the two confidence intervals.
    pub fn ci_contains(&self, value: f64) -> bool {
        self.lower.ci_lower <= value && value <= self.upper.ci_upper
    }
}

fn resolve_scale(a: Option<&StudySample>, b: &StudySample, scaling: Scaling) -> Result<OutcomeScale> {
    match scaling {
        Scaling::Auto => match a {
            Some(a) => OutcomeScale::auto(&[a, b]),
            None => OutcomeScale::auto(&[b]),
        },
        Scaling::Fixed { y_min, y_max } => OutcomeScale::new(y_min, y_max),
        Scaling::Raw => Ok(OutcomeScale::identity()),
    }
}

/// Bounds from nuisances already cross-fit on `b` (for example by a SWLATE run).
#[allow(clippy::too_many_arguments)]
pub fn bounds_with_predictions(
    a: Option<&StudySample>,
    b: &StudySample,
    preds: &NuisancePredictions,
    spec: &LearnerSpec,
    seed: u64,
    alpha: f64,
    weighted: bool,
    scaling: Scaling,
) -> Result<BoundsReport> {
    let scale = resolve_scale(a, b, scaling)?;
    let (scaled, v) = match scaling {
        Scaling::Raw => (b.clone(), v_unchecked(b.outcome(), b.treatment())),
        _ => {
            let s = scale_outcome(b, &scale)?;
            let v = v_variables(&s)?;
            (s, v)
        }
    };
    let (lo_n, up_n) = fit_bound_nuisances(&scaled, v, preds, spec, seed)?;
    let lower_scaled = swate_bound(preds, &scaled, &lo_n, alpha, weighted)?;
    let upper_scaled = swate_bound(preds, &scaled, &up_n, alpha, weighted)?;
    if lower_scaled.point > upper_scaled.point + CROSSING_TOLERANCE {
        bail!(
            Estimation,
            "estimated bounds cross (lower {:.6} > upper {:.6}); inspect nuisance diagnostics",
            lower_scaled.point,
            upper_scaled.point
        );
    }
    let slope = scale.range();
    Ok(BoundsReport {
        lower: lower_scaled.rescaled(slope),
        upper: upper_scaled.rescaled(slope),
        lower_scaled,
        upper_scaled,
        scale,
        scaling,
        weighted,
        alpha,
        n_b: b.len(),
    })
}

/// Cross-fits all nuisances and estimates both bounds.
pub fn bounds_report(
    a: Option<&StudySample>,
    b: &StudySample,
    plan: &CrossfitPlan,
    alpha: f64,
    weighted: bool,
    scaling: Scaling,
) -> Result<BoundsReport> {
    let preds = cross_fit(if weighted { a } else { None }, b, plan)?;
    bounds_with_predictions(a, b, &preds, &plan.learners.outcome, plan.seed, alpha, weighted, scaling)
}
