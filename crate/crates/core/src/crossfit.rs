//! Cross-fitted nuisance estimation over study B, with the sampling score
//! fit on study A pooled with each fold's training complement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, pool_for_weights, FoldAssignment, StudySample};
use crate::error::{bail, Error, Result};
use crate::learners::{fit, predict, LearnerSpec, TargetType};
use crate::math::{derive_seed, mean, quantile_sorted, std_dev};

// Seed streams, one per nuisance role. Bound targets share one stream so that
// identical targets give identical fits.
const STREAM_FOLDS: u64 = 0;
const STREAM_OUTCOME: u64 = 1;
const STREAM_TREATMENT: u64 = 2;
const STREAM_INSTRUMENT: u64 = 3;
const STREAM_SAMPLING: u64 = 4;
const STREAM_BOUNDS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds { lo: 0.01, hi: 0.99 }
    }
}

impl ClipBounds {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            bail!(Argument, "{what} clip bounds must satisfy 0 < lo < hi < 1, got ({}, {})", self.lo, self.hi);
        }
        Ok(())
    }

    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }

    pub fn clips(&self, p: f64) -> bool {
        p < self.lo || p > self.hi
    }
}

const ENSEMBLE_TREES: usize = 100;

/// Learners for each nuisance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceLearners {
    /// μ_z(X) = E[Y | X, Z = z].
    pub outcome: LearnerSpec,
    /// m_z(X) = E[D | X, Z = z].
    pub treatment: LearnerSpec,
    /// e(X) = P(Z = 1 | X).
    pub instrument: LearnerSpec,
    /// η(X) = P(study B | X).
    pub sampling: LearnerSpec,
}

impl NuisanceLearners {
    /// Linear outcome regression with logistic models for every binary target.
    pub fn glm() -> Self {
        NuisanceLearners {
            outcome: LearnerSpec::Linear,
            treatment: LearnerSpec::Logistic,
            instrument: LearnerSpec::Logistic,
            sampling: LearnerSpec::Logistic,
        }
    }

    /// Stacks of a GLM, an additive spline, and a tree ensemble, weights
    /// chosen by 5-fold CV.
    pub fn ensemble() -> Self {
        let spline = LearnerSpec::AdditiveSpline { knots: 4, lambda: 0.0 };
        let forest = LearnerSpec::TreeEnsemble { trees: ENSEMBLE_TREES, max_depth: 6, min_leaf: 10 };
        let stack = |glm: LearnerSpec| LearnerSpec::Stack { members: alloc::vec![glm, spline.clone(), forest.clone()], folds: 5 };
        NuisanceLearners {
            outcome: stack(LearnerSpec::Linear),
            treatment: stack(LearnerSpec::Logistic),
            instrument: stack(LearnerSpec::Logistic),
            sampling: stack(LearnerSpec::Logistic),
        }
    }

    pub fn uniform(spec: LearnerSpec) -> Self {
        NuisanceLearners { outcome: spec.clone(), treatment: spec.clone(), instrument: spec.clone(), sampling: spec }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitPlan {
    pub k: usize,
    pub learners: NuisanceLearners,
    #[serde(default)]
    pub clip_e: ClipBounds,
    #[serde(default)]
    pub clip_eta: ClipBounds,
    pub seed: u64,
}

impl CrossfitPlan {
    pub fn new(k: usize, learners: NuisanceLearners, seed: u64) -> Self {
        CrossfitPlan { k, learners, clip_e: ClipBounds::default(), clip_eta: ClipBounds::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            bail!(Argument, "cross-fitting needs at least 2 folds, got {}", self.k);
        }
        self.clip_e.validate("instrument propensity")?;
        self.clip_eta.validate("sampling score")?;
        for (name, spec) in [
            ("outcome", &self.learners.outcome),
            ("treatment", &self.learners.treatment),
            ("instrument", &self.learners.instrument),
            ("sampling", &self.learners.sampling),
        ] {
            spec.validate().map_err(|e| e.context(&format!("{name} learner")))?;
        }
        Ok(())
    }
}

/// Held-out nuisance predictions for every unit of study B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisancePredictions {
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    /// Clipped instrument propensity.
    pub e: Vec<f64>,
    /// Clipped sampling score.
    pub eta: Vec<f64>,
    /// `(1 - eta) / eta`, from the clipped `eta`.
    pub w: Vec<f64>,
    pub e_raw: Vec<f64>,
    pub eta_raw: Vec<f64>,
    pub folds: FoldAssignment,
    pub clip_e: ClipBounds,
    pub clip_eta: ClipBounds,
    /// Number of fitted GLMs that fell back to ridge.
    pub fallbacks: usize,
}

impl NuisancePredictions {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Assembles predictions from raw propensities, clipping and deriving `w`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        mu1: Vec<f64>,
        mu0: Vec<f64>,
        m1: Vec<f64>,
        m0: Vec<f64>,
        e_raw: Vec<f64>,
        eta_raw: Vec<f64>,
        folds: FoldAssignment,
        clip_e: ClipBounds,
        clip_eta: ClipBounds,
    ) -> Result<Self> {
        let n = e_raw.len();
        for (what, len) in [("mu1", mu1.len()), ("mu0", mu0.len()), ("m1", m1.len()), ("m0", m0.len()), ("eta", eta_raw.len()), ("folds", folds.labels().len())] {
            if len != n {
                bail!(Argument, "{what} has {len} predictions, expected {n}");
            }
        }
        let e: Vec<f64> = e_raw.iter().map(|&p| clip_e.apply(p)).collect();
        let eta: Vec<f64> = eta_raw.iter().map(|&p| clip_eta.apply(p)).collect();
        let w = eta.iter().map(|&h| (1.0 - h) / h).collect();
        Ok(NuisancePredictions { mu1, mu0, m1, m0, e, eta, w, e_raw, eta_raw, folds, clip_e, clip_eta, fallbacks: 0 })
    }
}

fn probability_target(values: &[u8]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

fn arm_rows(rows: &[usize], z: &[u8], arm: u8) -> Vec<usize> {
    rows.iter().copied().filter(|&i| z[i] == arm).collect()
}

/// Cross-fits a pair of per-arm regressions: `targets1` on the Z = 1 units of
/// each training complement and `targets0` on the Z = 0 units, predicting
/// both on every held-out unit. Returns `(pred1, pred0, fallbacks)`.
#[allow(clippy::too_many_arguments)]
fn cross_fit_arms(
    b: &StudySample,
    folds: &FoldAssignment,
    targets1: &[f64],
    targets0: &[f64],
    spec: &LearnerSpec,
    target: TargetType,
    seed: u64,
    role: &str,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = b.len();
    let z = b.instrument();
    let x = b.covariates();
    let mut pred = [vec![0.0; n], vec![0.0; n]];
    let mut fallbacks = 0;
    for k in 0..folds.k() {
        let train = folds.complement(k);
        let test = folds.members(k);
        let x_test = x.select_rows(&test);
        for (slot, arm, targets) in [(0usize, 1u8, targets1), (1, 0, targets0)] {
            let rows = arm_rows(&train, z, arm);
            if rows.is_empty() {
                bail!(Estimation, "fold {}: no training units with Z = {arm} for the {role} regression", k + 1);
            }
            let y: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
            let model = fit(spec, &x.select_rows(&rows), &y, target, derive_seed(seed, (2 * k + slot) as u64))
                .map_err(|e| e.context(&format!("fold {}, {role} regression for Z = {arm}", k + 1)))?;
            fallbacks += usize::from(model.used_fallback());
            for (&i, p) in test.iter().zip(predict(&model, &x_test)?) {
                pred[slot][i] = p;
            }
        }
    }
    let [p1, p0] = pred;
    Ok((p1, p0, fallbacks))
}

/// Runs the cross-fitting procedure on study B. With `a = None` no sampling
/// model is fit: every `eta` is 0.5 and every weight is 1.
pub fn cross_fit(a: Option<&StudySample>, b: &StudySample, plan: &CrossfitPlan) -> Result<NuisancePredictions> {
    plan.validate()?;
    if let Some(a) = a {
        if a.dim() != b.dim() {
            bail!(Argument, "study A has {} covariates but study B has {}", a.dim(), b.dim());
        }
        if a.is_empty() {
            bail!(Argument, "study A is empty");
        }
    }
    let folds = make_folds(b, plan.k, derive_seed(plan.seed, STREAM_FOLDS))?;
    let n = b.len();
    let x = b.covariates();
    let y = b.outcome();
    let d = probability_target(b.treatment());
    let zf = probability_target(b.instrument());

    let (mu1, mu0, fb_mu) = cross_fit_arms(
        b,
        &folds,
        y,
        y,
        &plan.learners.outcome,
        TargetType::Regression,
        derive_seed(plan.seed, STREAM_OUTCOME),
        "outcome",
    )?;
    let (m1, m0, fb_m) = cross_fit_arms(
        b,
        &folds,
        &d,
        &d,
        &plan.learners.treatment,
        TargetType::Probability,
        derive_seed(plan.seed, STREAM_TREATMENT),
        "treatment",
    )?;

    let mut e_raw = vec![0.0; n];
    let mut eta_raw = vec![0.5; n];
    let mut fallbacks = fb_mu + fb_m;
    for k in 0..folds.k() {
        let train = folds.complement(k);
        let test = folds.members(k);
        let x_test = x.select_rows(&test);

        let zt: Vec<f64> = train.iter().map(|&i| zf[i]).collect();
        let e_model = fit(
            &plan.learners.instrument,
            &x.select_rows(&train),
            &zt,
            TargetType::Probability,
            derive_seed(derive_seed(plan.seed, STREAM_INSTRUMENT), k as u64),
        )
        .map_err(|e| e.context(&format!("fold {}, instrument propensity", k + 1)))?;
        fallbacks += usize::from(e_model.used_fallback());
        for (&i, p) in test.iter().zip(predict(&e_model, &x_test)?) {
            e_raw[i] = p;
        }

        if let Some(a) = a {
            let pooled = pool_for_weights(a, b, &train)?;
            let membership = probability_target(&pooled.membership);
            let eta_model = fit(
                &plan.learners.sampling,
                &pooled.covariates,
                &membership,
                TargetType::Probability,
                derive_seed(derive_seed(plan.seed, STREAM_SAMPLING), k as u64),
            )
            .map_err(|e| e.context(&format!("fold {}, sampling score", k + 1)))?;
            fallbacks += usize::from(eta_model.used_fallback());
            for (&i, p) in test.iter().zip(predict(&eta_model, &x_test)?) {
                eta_raw[i] = p;
            }
        }
    }

    let mut preds = NuisancePredictions::from_raw(mu1, mu0, m1, m0, e_raw, eta_raw, folds, plan.clip_e, plan.clip_eta)?;
    preds.fallbacks = fallbacks;
    Ok(preds)
}

/// Cross-fits per-arm regressions of `targets1` (on Z = 1) and `targets0`
/// (on Z = 0) over the folds already used for `preds`. Calls with the same
/// plan reuse one seed stream, so equal targets give equal predictions.
pub fn cross_fit_arm_targets(
    b: &StudySample,
    folds: &FoldAssignment,
    targets1: &[f64],
    targets0: &[f64],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if targets1.len() != b.len() || targets0.len() != b.len() {
        bail!(Argument, "arm targets must have one value per study B unit");
    }
    if folds.labels().len() != b.len() {
        bail!(Argument, "fold assignment covers {} units but study B has {}", folds.labels().len(), b.len());
    }
    let (p1, p0, _) = cross_fit_arms(
        b,
        folds,
        targets1,
        targets0,
        spec,
        TargetType::Regression,
        derive_seed(seed, STREAM_BOUNDS),
        "bound",
    )?;
    Ok((p1, p0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub max: f64,
    /// 10th through 90th percentiles.
    pub deciles: Vec<f64>,
}

impl Distribution {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Distribution { min: f64::NAN, max: f64::NAN, deciles: vec![f64::NAN; 9] };
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Distribution {
            min: s[0],
            max: s[s.len() - 1],
            deciles: (1..10).map(|q| quantile_sorted(&s, q as f64 / 10.0)).collect(),
        }
    }
}

pub const WEAK_IV_THRESHOLD: f64 = 0.05;
pub const CLIP_WARNING_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub e_raw: Distribution,
    pub eta_raw: Distribution,
    pub e_clipped_fraction: f64,
    pub eta_clipped_fraction: f64,
    /// Estimated complier share, mean(m1 - m0).
    pub instrument_strength: f64,
    /// Observed difference P(D = 1 | Z = 1) - P(D = 1 | Z = 0).
    pub raw_strength: f64,
    pub weight_cv: f64,
    pub fallbacks: usize,
    pub weak_instrument: bool,
    pub positivity_warning: bool,
    pub warnings: Vec<String>,
}

/// Summarizes positivity and relevance of the fitted nuisances. Never fails.
pub fn diagnostics(preds: &NuisancePredictions, b: &StudySample) -> DiagnosticsReport {
    let n = preds.len().max(1) as f64;
    let e_clipped = preds.e_raw.iter().filter(|&&p| preds.clip_e.clips(p)).count() as f64 / n;
    let eta_clipped = preds.eta_raw.iter().filter(|&&p| preds.clip_eta.clips(p)).count() as f64 / n;
    let diffs: Vec<f64> = preds.m1.iter().zip(&preds.m0).map(|(a, b)| a - b).collect();
    let strength = mean(&diffs);

    let (mut t1, mut n1, mut t0, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for (&z, &d) in b.instrument().iter().zip(b.treatment()) {
        if z == 1 {
            t1 += f64::from(d);
            n1 += 1.0;
        } else {
            t0 += f64::from(d);
            n0 += 1.0;
        }
    }
    let raw_strength = if n1 > 0.0 && n0 > 0.0 { t1 / n1 - t0 / n0 } else { f64::NAN };

    let w_mean = mean(&preds.w);
    let weight_cv = if preds.w.len() > 1 && w_mean > 0.0 { std_dev(&preds.w) / w_mean } else { 0.0 };

    let weak = !(strength.abs() >= WEAK_IV_THRESHOLD);
    let positivity = e_clipped > CLIP_WARNING_FRACTION || eta_clipped > CLIP_WARNING_FRACTION;
    let mut warnings = Vec::new();
    if weak {
        warnings.push(format!("weak instrument: estimated strength {strength:.4} is below {WEAK_IV_THRESHOLD}"));
    }
    if e_clipped > CLIP_WARNING_FRACTION {
        warnings.push(format!("positivity: {:.1}% of instrument propensities were clipped", 100.0 * e_clipped));
    }
    if eta_clipped > CLIP_WARNING_FRACTION {
        warnings.push(format!("positivity: {:.1}% of sampling scores were clipped", 100.0 * eta_clipped));
    }
    if preds.fallbacks > 0 {
        warnings.push(format!("{} logistic fit(s) fell back to ridge after separation or non-convergence", preds.fallbacks));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    DiagnosticsReport {
        e_raw: Distribution::of(&preds.e_raw),
        eta_raw: Distribution::of(&preds.eta_raw),
        e_clipped_fraction: e_clipped,
        eta_clipped_fraction: eta_clipped,
        instrument_strength: strength,
        raw_strength,
        weight_cv,
        fallbacks: preds.fallbacks,
        weak_instrument: weak,
        positivity_warning: positivity,
        warnings,
    }
}

/// Error used when a unit's propensity escaped the clip interval.
pub(crate) fn check_propensities(preds: &NuisancePredictions, n: usize) -> Result<()> {
    if preds.len() != n {
        bail!(Argument, "nuisance predictions cover {} units but study B has {n}", preds.len());
    }
    if let Some(i) = preds.e.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Numerical(format!("instrument propensity {} at unit {i} is outside (0, 1)", preds.e[i])));
    }
    if let Some(i) = preds.w.iter().position(|&w| !(w.is_finite() && w > 0.0)) {
        return Err(Error::Numerical(format!("weight {} at unit {i} is not positive and finite", preds.w[i])));
    }
    Ok(())
}
