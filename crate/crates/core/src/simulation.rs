//! Two-cohort data-generating mechanisms with known LATEs, replication
//! studies, and resampling-based cohort construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{bounds_with_predictions, Scaling};
use crate::crossfit::{cross_fit, diagnostics, CrossfitPlan};
use crate::dataset::{Study, StudySample};
use crate::error::{bail, Error, Result};
use crate::estimator::swlate;
use crate::math::{derive_seed, expit, mean, std_dev, variance};
use crate::matrix::{cholesky, Matrix};

pub const P: usize = 6;
const CALIBRATION_SEED: u64 = 0x0ca1_1b2a_7e5e_ed00;
const TRUTH_STREAM: u64 = 0x7e57;
/// Failure fraction above which a replication run is flagged.
pub const FAILURE_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linearity {
    Linear,
    Nonlinear,
}

/// Which covariates the treatment-effect modifiers β₂..β₇ multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionLayout {
    /// β_i D X_i for i = 2..6; β₇ has no matching covariate.
    Literal,
    /// β_{i+1} D X_i for i = 1..6.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgmSpec {
    pub n: usize,
    pub linearity: Linearity,
    /// Target marginal complier share.
    pub strength: f64,
    /// Every unit is a complier (D = Z); `strength` is ignored.
    pub perfect_compliance: bool,
    /// Sampling model: intercept then X1..X6.
    pub alpha: [f64; 7],
    /// Instrument propensity: intercept then X1..X6.
    pub gamma: [f64; 7],
    /// Compliance score: intercept then X1..X6.
    pub theta: [f64; 7],
    /// β₁ (effect), β₂..β₇ (modifiers), β₈..β₁₃ (main effects).
    pub beta: [f64; 13],
    pub variance: f64,
    pub covariance: f64,
    pub interactions: InteractionLayout,
    /// Population whose complier share is set to `strength`.
    pub calibrate_on: Study,
    pub calibration_draws: usize,
    pub calibration_tol: f64,
    pub seed: u64,
}

impl Default for DgmSpec {
    fn default() -> Self {
        DgmSpec {
            n: 1500,
            linearity: Linearity::Linear,
            strength: 0.5,
            perfect_compliance: false,
            alpha: [0.0, 0.4, 0.4, 0.4, -0.4, -0.4, -0.4],
            gamma: [0.0, 0.1, 0.1, 0.1, -0.1, -0.1, -0.1],
            theta: [0.0, 0.4, 0.4, 0.4, -0.8, -0.8, -0.8],
            beta: [1.0, 0.35, 0.35, 0.35, -0.35, -0.35, -0.35, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5],
            variance: 1.5,
            covariance: 0.3,
            interactions: InteractionLayout::Literal,
            calibrate_on: Study::B,
            calibration_draws: 200_000,
            calibration_tol: 1e-3,
            seed: 1,
        }
    }
}

impl DgmSpec {
    pub fn new(linearity: Linearity, strength: f64) -> Self {
        DgmSpec { linearity, strength, ..DgmSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            bail!(Argument, "n must be at least 2, got {}", self.n);
        }
        if !self.perfect_compliance && !(self.strength > 0.0 && self.strength < 1.0) {
            bail!(Argument, "strength must lie in (0, 1), got {}", self.strength);
        }
        if self.calibration_draws < 100 {
            bail!(Argument, "calibration_draws must be at least 100");
        }
        if !(self.calibration_tol > 0.0) {
            bail!(Argument, "calibration_tol must be positive");
        }
        let all = self.alpha.iter().chain(&self.gamma).chain(&self.theta).chain(&self.beta);
        if all.clone().any(|c| !c.is_finite()) {
            bail!(Argument, "coefficients must be finite");
        }
        if cholesky(&self.covariance_matrix(), P, 1e-12).is_none() {
            bail!(Argument, "covariance (variance {}, within-block {}) is not positive definite", self.variance, self.covariance);
        }
        Ok(())
    }

    /// Block covariance: blocks {X1,X2,X3} and {X4,X5,X6}, row-major 6×6.
    pub fn covariance_matrix(&self) -> Vec<f64> {
        let mut s = vec![0.0; P * P];
        for i in 0..P {
            for j in 0..P {
                s[i * P + j] = if i == j {
                    self.variance
                } else if (i < 3) == (j < 3) {
                    self.covariance
                } else {
                    0.0
                };
            }
        }
        s
    }

    /// Coefficients on D·X1..D·X6.
    pub fn interaction_coefficients(&self) -> [f64; P] {
        let b = &self.beta;
        match self.interactions {
            InteractionLayout::Literal => [0.0, b[1], b[2], b[3], b[4], b[5]],
            InteractionLayout::Shifted => [b[1], b[2], b[3], b[4], b[5], b[6]],
        }
    }

    /// Sampling logit without its intercept.
    pub fn sampling_index(&self, x: &[f64]) -> f64 {
        let a = &self.alpha;
        match self.linearity {
            Linearity::Linear => linear(a, x),
            Linearity::Nonlinear => {
                a[1] * x[0] + a[2] * x[1] * x[1] + a[3] * x[2] * x[2] + a[4] * libm::exp(x[3]) + a[5] * libm::sin(x[4]) + a[6] * x[5]
            }
        }
    }

    /// Instrument-propensity logit without its intercept.
    pub fn instrument_index(&self, x: &[f64]) -> f64 {
        let g = &self.gamma;
        match self.linearity {
            Linearity::Linear => linear(g, x),
            Linearity::Nonlinear => {
                g[1] * x[0] + g[2] * libm::exp(x[1]) + g[3] * x[2] * x[2] + g[4] * x[3] + g[5] * libm::cos(x[4]) + g[6] * x[5]
            }
        }
    }

    /// Compliance-score logit without its intercept.
    pub fn compliance_index(&self, x: &[f64]) -> f64 {
        let t = &self.theta;
        match self.linearity {
            Linearity::Linear => linear(t, x),
            Linearity::Nonlinear => {
                t[1] * x[0] * x[0] + t[2] * libm::exp(x[1]) + t[3] * x[2] + t[4] * x[3] * x[3] * x[3] + t[5] * x[4] + t[6] * x[5]
            }
        }
    }

    /// Main-effect term f(X) of the outcome.
    pub fn main_effect(&self, x: &[f64]) -> f64 {
        let b = &self.beta;
        match self.linearity {
            Linearity::Linear => (0..P).map(|i| b[7 + i] * x[i]).sum(),
            Linearity::Nonlinear => {
                b[7] * x[0] * x[0] + b[8] * x[1] * x[1] + b[9] * libm::exp(x[2]) + b[10] * x[3] + b[11] * libm::exp(x[4]) + b[12] * libm::cos(x[5])
            }
        }
    }

    /// Effect of treatment for a unit with covariates `x`.
    pub fn unit_effect(&self, x: &[f64]) -> f64 {
        let m = self.interaction_coefficients();
        self.beta[0] + (0..P).map(|i| m[i] * x[i]).sum::<f64>()
    }
}

fn linear(c: &[f64; 7], x: &[f64]) -> f64 {
    (0..P).map(|i| c[i + 1] * x[i]).sum()
}

/// Intercepts solved so the marginal sampling probability and instrument
/// propensity are 0.5 and the complier share equals the target strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha0: f64,
    pub gamma0: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDgm {
    pub spec: DgmSpec,
    pub calibration: Calibration,
    chol: Vec<f64>,
}

/// Solves `mean(expit(c + index)) = target` for `c` by bisection.
pub fn solve_intercept(index: &[f64], target: f64, tol: f64) -> f64 {
    let share = |c: f64| mean(&index.iter().map(|&v| expit(c + v)).collect::<Vec<_>>());
    let (mut lo, mut hi) = (-50.0, 50.0);
    let mut mid = 0.0;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let s = share(mid);
        if (s - target).abs() < tol * 1e-3 || hi - lo < 1e-12 {
            break;
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!((share(mid) - target).abs() < tol);
    mid
}

pub fn calibrate(spec: &DgmSpec) -> Result<CalibratedDgm> {
    spec.validate()?;
    let chol = cholesky(&spec.covariance_matrix(), P, 1e-12).ok_or_else(|| Error::Argument("covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let base = draw_normal(&chol, spec.calibration_draws, &mut rng);
    let s_idx: Vec<f64> = base.iter_rows().map(|r| spec.sampling_index(r)).collect();
    let alpha0 = solve_intercept(&s_idx, 0.5, spec.calibration_tol);
    let e_idx: Vec<f64> = base.iter_rows().map(|r| spec.instrument_index(r)).collect();
    let gamma0 = solve_intercept(&e_idx, 0.5, spec.calibration_tol);
    let theta0 = if spec.perfect_compliance {
        f64::INFINITY
    } else {
        let pop = match spec.calibrate_on {
            Study::A => base,
            Study::B => {
                let probs: Vec<f64> = s_idx.iter().map(|&v| expit(alpha0 + v)).collect();
                let rows = resample(&probs, spec.calibration_draws, &mut rng)?;
                base.select_rows(&rows)
            }
        };
        let c_idx: Vec<f64> = pop.iter_rows().map(|r| spec.compliance_index(r)).collect();
        solve_intercept(&c_idx, spec.strength, spec.calibration_tol)
    };
    Ok(CalibratedDgm { spec: spec.clone(), calibration: Calibration { alpha0, gamma0, theta0 }, chol })
}

fn draw_normal<R: Rng + ?Sized>(chol: &[f64], n: usize, rng: &mut R) -> Matrix {
    let mut data = Vec::with_capacity(n * P);
    let mut z = [0.0; P];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..P {
            data.push((0..=i).map(|j| chol[i * P + j] * z[j]).sum());
        }
    }
    Matrix::from_vec(n, P, data).expect("dimensions are consistent")
}

/// Draws `n` row indices with replacement, with probability proportional to `probs`.
pub fn resample<R: Rng + ?Sized>(probs: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::Argument(format!("invalid resampling weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Never-taker, always-taker, complier.
pub const NEVER: u8 = 0;
pub const ALWAYS: u8 = 1;
pub const COMPLIER: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub sample: StudySample,
    pub strata: Vec<u8>,
    pub compliance_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohorts {
    pub a: SimulatedCohort,
    pub b: SimulatedCohort,
    /// Rows of the base draw (study A) that make up study B.
    pub b_rows: Vec<usize>,
}

impl CalibratedDgm {
    pub fn gen_covariates<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        draw_normal(&self.chol, n, rng)
    }

    pub fn compliance_prob(&self, x: &[f64]) -> f64 {
        if self.spec.perfect_compliance {
            1.0
        } else {
            expit(self.calibration.theta0 + self.spec.compliance_index(x))
        }
    }

    pub fn sampling_prob(&self, x: &[f64]) -> f64 {
        expit(self.calibration.alpha0 + self.spec.sampling_index(x))
    }

    pub fn instrument_prob(&self, x: &[f64]) -> f64 {
        expit(self.calibration.gamma0 + self.spec.instrument_index(x))
    }

    /// Principal strata drawn with probabilities ((1-δ)/2, (1-δ)/2, δ).
    pub fn gen_strata<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> (Vec<u8>, Vec<f64>) {
        let delta: Vec<f64> = x.iter_rows().map(|r| self.compliance_prob(r)).collect();
        let strata = delta
            .iter()
            .map(|&d| {
                let u: f64 = rng.random();
                if u < d {
                    COMPLIER
                } else if u < d + 0.5 * (1.0 - d) {
                    ALWAYS
                } else {
                    NEVER
                }
            })
            .collect();
        (strata, delta)
    }

    /// Instrument, strata, treatment, and outcome for a cohort with covariates `x`.
    pub fn gen_cohort<R: Rng + ?Sized>(&self, x: Matrix, label: Study, rng: &mut R) -> Result<SimulatedCohort> {
        let z: Vec<u8> = x.iter_rows().map(|r| u8::from(rng.random::<f64>() < self.instrument_prob(r))).collect();
        let (strata, delta) = self.gen_strata(&x, rng);
        let d: Vec<u8> = strata.iter().zip(&z).map(|(&s, &z)| if s == COMPLIER { z } else { s }).collect();
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&d)
            .map(|(r, &d)| {
                let eps: f64 = rng.sample(StandardNormal);
                f64::from(d) * self.spec.unit_effect(r) + self.spec.main_effect(r) + eps
            })
            .collect();
        let sample = StudySample::unnamed(x, z, d, y, label)?;
        Ok(SimulatedCohort { sample, strata, compliance_prob: delta })
    }

    pub fn gen_cohorts<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimulatedCohorts> {
        let n = self.spec.n;
        let base = self.gen_covariates(n, rng);
        let probs: Vec<f64> = base.iter_rows().map(|r| self.sampling_prob(r)).collect();
        let b_rows = resample(&probs, n, rng)?;
        let xb = base.select_rows(&b_rows);
        let a = self.gen_cohort(base, Study::A, rng)?;
        let b = self.gen_cohort(xb, Study::B, rng)?;
        Ok(SimulatedCohorts { a, b, b_rows })
    }

    pub fn gen_cohorts_seeded(&self, seed: u64) -> Result<SimulatedCohorts> {
        self.gen_cohorts(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// β₁ + Σ β_i mean(X_i | S = 2) over one cohort's compliers.
    pub fn complier_late(&self, cohort: &SimulatedCohort) -> Option<f64> {
        let rows: Vec<usize> = (0..cohort.strata.len()).filter(|&i| cohort.strata[i] == COMPLIER).collect();
        if rows.is_empty() {
            return None;
        }
        let effects: Vec<f64> = rows.iter().map(|&i| self.spec.unit_effect(cohort.sample.covariates().row(i))).collect();
        Some(mean(&effects))
    }

    pub fn cohort_ate(&self, cohort: &SimulatedCohort) -> f64 {
        mean(&cohort.sample.covariates().iter_rows().map(|r| self.spec.unit_effect(r)).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub late_a: f64,
    pub late_b: f64,
    /// Monte Carlo standard errors of the two LATEs.
    pub late_a_se: f64,
    pub late_b_se: f64,
    pub ate_a: f64,
    pub ate_b: f64,
    pub complier_share_a: f64,
    pub complier_share_b: f64,
    pub reps: usize,
}

/// Averages each cohort's complier LATE over `reps` fresh draws.
pub fn ground_truth_late(dgm: &CalibratedDgm, reps: usize) -> Result<GroundTruth> {
    if reps == 0 {
        bail!(Argument, "ground truth needs at least one replication");
    }
    let mut la = Vec::with_capacity(reps);
    let mut lb = Vec::with_capacity(reps);
    let mut aa = Vec::with_capacity(reps);
    let mut ab = Vec::with_capacity(reps);
    let mut sa = Vec::with_capacity(reps);
    let mut sb = Vec::with_capacity(reps);
    let stream = derive_seed(dgm.spec.seed, TRUTH_STREAM);
    for r in 0..reps {
        let c = dgm.gen_cohorts_seeded(derive_seed(stream, r as u64))?;
        if let (Some(a), Some(b)) = (dgm.complier_late(&c.a), dgm.complier_late(&c.b)) {
            la.push(a);
            lb.push(b);
        }
        aa.push(dgm.cohort_ate(&c.a));
        ab.push(dgm.cohort_ate(&c.b));
        let share = |s: &[u8]| s.iter().filter(|&&v| v == COMPLIER).count() as f64 / s.len() as f64;
        sa.push(share(&c.a.strata));
        sb.push(share(&c.b.strata));
    }
    if la.is_empty() {
        bail!(Estimation, "no compliers were drawn in any replication");
    }
    let mcse = |v: &[f64]| if v.len() > 1 { std_dev(v) / libm::sqrt(v.len() as f64) } else { 0.0 };
    Ok(GroundTruth {
        late_a: mean(&la),
        late_b: mean(&lb),
        late_a_se: mcse(&la),
        late_b_se: mcse(&lb),
        ate_a: mean(&aa),
        ate_b: mean(&ab),
        complier_share_a: mean(&sa),
        complier_share_b: mean(&sb),
        reps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Late,
    Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub plan: CrossfitPlan,
    pub alpha: f64,
    pub analysis: Analysis,
    /// Outcome scaling for the bounds analysis.
    #[serde(default = "default_sim_scaling")]
    pub scaling: Scaling,
}

fn default_sim_scaling() -> Scaling {
    Scaling::Raw
}

/// One replication's LATE estimates, weighted and unweighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateRecord {
    pub rep: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: String,
    pub weighted_point: f64,
    pub weighted_se: f64,
    pub weighted_ci_lower: f64,
    pub weighted_ci_upper: f64,
    pub unweighted_point: f64,
    pub unweighted_se: f64,
    pub unweighted_ci_lower: f64,
    pub unweighted_ci_upper: f64,
    pub strength: f64,
    pub fallbacks: usize,
}

/// One replication's weighted and unweighted ATE bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRecord {
    pub rep: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: String,
    pub weighted_lower: f64,
    pub weighted_upper: f64,
    pub weighted_lower_ci: f64,
    pub weighted_upper_ci: f64,
    pub unweighted_lower: f64,
    pub unweighted_upper: f64,
    pub unweighted_lower_ci: f64,
    pub unweighted_upper_ci: f64,
}

fn replication_seeds(master: u64, rep: usize) -> (u64, u64) {
    let s = derive_seed(master, rep as u64);
    (derive_seed(s, 0), derive_seed(s, 1))
}

pub fn run_late_replication(dgm: &CalibratedDgm, config: &SimulationConfig, rep: usize) -> LateRecord {
    let (data_seed, fit_seed) = replication_seeds(dgm.spec.seed, rep);
    let mut rec = LateRecord {
        rep,
        seed: data_seed,
        ok: false,
        error: String::new(),
        weighted_point: f64::NAN,
        weighted_se: f64::NAN,
        weighted_ci_lower: f64::NAN,
        weighted_ci_upper: f64::NAN,
        unweighted_point: f64::NAN,
        unweighted_se: f64::NAN,
        unweighted_ci_lower: f64::NAN,
        unweighted_ci_upper: f64::NAN,
        strength: f64::NAN,
        fallbacks: 0,
    };
    let result = (|| -> Result<()> {
        let c = dgm.gen_cohorts_seeded(data_seed)?;
        let plan = CrossfitPlan { seed: fit_seed, ..config.plan.clone() };
        let preds = cross_fit(Some(&c.a.sample), &c.b.sample, &plan)?;
        let w = swlate(&preds, &c.b.sample, config.alpha, true)?;
        let u = swlate(&preds, &c.b.sample, config.alpha, false)?;
        rec.weighted_point = w.point;
        rec.weighted_se = w.se;
        rec.weighted_ci_lower = w.ci_lower;
        rec.weighted_ci_upper = w.ci_upper;
        rec.unweighted_point = u.point;
        rec.unweighted_se = u.se;
        rec.unweighted_ci_lower = u.ci_lower;
        rec.unweighted_ci_upper = u.ci_upper;
        rec.strength = diagnostics(&preds, &c.b.sample).instrument_strength;
        rec.fallbacks = preds.fallbacks;
        Ok(())
    })();
    match result {
        Ok(()) => rec.ok = true,
        Err(e) => rec.error = e.to_string(),
    }
    rec
}

pub fn run_bounds_replication(dgm: &CalibratedDgm, config: &SimulationConfig, rep: usize) -> BoundsRecord {
    let (data_seed, fit_seed) = replication_seeds(dgm.spec.seed, rep);
    let mut rec = BoundsRecord {
        rep,
        seed: data_seed,
        ok: false,
        error: String::new(),
        weighted_lower: f64::NAN,
        weighted_upper: f64::NAN,
        weighted_lower_ci: f64::NAN,
        weighted_upper_ci: f64::NAN,
        unweighted_lower: f64::NAN,
        unweighted_upper: f64::NAN,
        unweighted_lower_ci: f64::NAN,
        unweighted_upper_ci: f64::NAN,
    };
    let result = (|| -> Result<()> {
        let c = dgm.gen_cohorts_seeded(data_seed)?;
        let plan = CrossfitPlan { seed: fit_seed, ..config.plan.clone() };
        let preds = cross_fit(Some(&c.a.sample), &c.b.sample, &plan)?;
        let a = Some(&c.a.sample);
        let b = &c.b.sample;
        let spec = &plan.learners.outcome;
        let w = bounds_with_predictions(a, b, &preds, spec, fit_seed, config.alpha, true, config.scaling)?;
        let u = bounds_with_predictions(a, b, &preds, spec, fit_seed, config.alpha, false, config.scaling)?;
        rec.weighted_lower = w.lower.point;
        rec.weighted_upper = w.upper.point;
        rec.weighted_lower_ci = w.lower.ci_lower;
        rec.weighted_upper_ci = w.upper.ci_upper;
        rec.unweighted_lower = u.lower.point;
        rec.unweighted_upper = u.upper.point;
        rec.unweighted_lower_ci = u.lower.ci_lower;
        rec.unweighted_upper_ci = u.upper.ci_upper;
        Ok(())
    })();
    match result {
        Ok(()) => rec.ok = true,
        Err(e) => rec.error = e.to_string(),
    }
    rec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub estimator: String,
    pub target: f64,
    pub mean_point: f64,
    pub percent_bias: f64,
    pub mc_se: f64,
    pub mean_model_se: f64,
    pub coverage: f64,
    pub replications: usize,
    pub failures: usize,
    pub flagged: bool,
}

/// Aggregates LATE records against `target`. Order of `records` does not matter.
pub fn summarize_late(records: &[LateRecord], weighted: bool, target: f64) -> ReplicationSummary {
    let mut ok: Vec<&LateRecord> = records.iter().filter(|r| r.ok).collect();
    ok.sort_by_key(|r| r.rep);
    let pick = |r: &LateRecord| {
        if weighted {
            (r.weighted_point, r.weighted_se, r.weighted_ci_lower, r.weighted_ci_upper)
        } else {
            (r.unweighted_point, r.unweighted_se, r.unweighted_ci_lower, r.unweighted_ci_upper)
        }
    };
    let points: Vec<f64> = ok.iter().map(|r| pick(r).0).collect();
    let ses: Vec<f64> = ok.iter().map(|r| pick(r).1).collect();
    let covered = ok.iter().filter(|r| {
        let (_, _, lo, hi) = pick(r);
        lo <= target && target <= hi
    });
    let m = mean(&points);
    let failures = records.len() - ok.len();
    ReplicationSummary {
        estimator: if weighted { "weighted" } else { "unweighted" }.into(),
        target,
        mean_point: m,
        percent_bias: 100.0 * (m - target) / target,
        mc_se: if points.len() > 1 { libm::sqrt(variance(&points)) } else { f64::NAN },
        mean_model_se: mean(&ses),
        coverage: covered.count() as f64 / ok.len().max(1) as f64,
        replications: ok.len(),
        failures,
        flagged: failures as f64 > FAILURE_FLAG_FRACTION * records.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub estimator: String,
    pub target_ate: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub mean_width: f64,
    /// Fraction of replications whose bounds contain the target.
    pub coverage: f64,
    /// Fraction whose confidence envelope contains the target.
    pub ci_coverage: f64,
    pub replications: usize,
    pub failures: usize,
    pub flagged: bool,
}

pub fn summarize_bounds(records: &[BoundsRecord], weighted: bool, target_ate: f64) -> BoundsSummary {
    let mut ok: Vec<&BoundsRecord> = records.iter().filter(|r| r.ok).collect();
    ok.sort_by_key(|r| r.rep);
    let pick = |r: &BoundsRecord| {
        if weighted {
            (r.weighted_lower, r.weighted_upper, r.weighted_lower_ci, r.weighted_upper_ci)
        } else {
            (r.unweighted_lower, r.unweighted_upper, r.unweighted_lower_ci, r.unweighted_upper_ci)
        }
    };
    let lows: Vec<f64> = ok.iter().map(|r| pick(r).0).collect();
    let ups: Vec<f64> = ok.iter().map(|r| pick(r).1).collect();
    let widths: Vec<f64> = lows.iter().zip(&ups).map(|(l, u)| u - l).collect();
    let denom = ok.len().max(1) as f64;
    let coverage = ok.iter().filter(|r| pick(r).0 <= target_ate && target_ate <= pick(r).1).count() as f64 / denom;
    let ci_coverage = ok.iter().filter(|r| pick(r).2 <= target_ate && target_ate <= pick(r).3).count() as f64 / denom;
    let failures = records.len() - ok.len();
    BoundsSummary {
        estimator: if weighted { "weighted" } else { "unweighted" }.into(),
        target_ate,
        mean_lower: mean(&lows),
        mean_upper: mean(&ups),
        mean_width: mean(&widths),
        coverage,
        ci_coverage,
        replications: ok.len(),
        failures,
        flagged: failures as f64 > FAILURE_FLAG_FRACTION * records.len() as f64,
    }
}

/// Sequential replication loop; `rep` indices are `0..reps`.
pub fn run_late_replications(dgm: &CalibratedDgm, config: &SimulationConfig, reps: usize) -> Result<Vec<LateRecord>> {
    if reps < 2 {
        bail!(Argument, "a replication study needs at least 2 replications, got {reps}");
    }
    Ok((0..reps).map(|r| run_late_replication(dgm, config, r)).collect())
}

pub fn run_bounds_replications(dgm: &CalibratedDgm, config: &SimulationConfig, reps: usize) -> Result<Vec<BoundsRecord>> {
    if reps < 2 {
        bail!(Argument, "a replication study needs at least 2 replications, got {reps}");
    }
    Ok((0..reps).map(|r| run_bounds_replication(dgm, config, r)).collect())
}

/// Keeps `sample` as the target cohort and draws a current cohort of the same
/// size with replacement, with probabilities `expit(intercept + slopes·x)`.
pub fn cohort_split(sample: &StudySample, intercept: f64, slopes: &[f64], seed: u64) -> Result<(StudySample, StudySample)> {
    if slopes.len() != sample.dim() {
        bail!(Argument, "{} sampling coefficients for {} covariates", slopes.len(), sample.dim());
    }
    if sample.is_empty() {
        bail!(Argument, "cannot split an empty sample");
    }
    let probs: Vec<f64> = sample
        .covariates()
        .iter_rows()
        .map(|r| expit(intercept + r.iter().zip(slopes).map(|(x, s)| x * s).sum::<f64>()))
        .collect();
    let rows = resample(&probs, sample.len(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let current = sample.select(&rows).with_label(Study::B);
    Ok((sample.clone().with_label(Study::A), current))
}

/// Per-covariate (mean_b - mean_a) / sqrt((var_a + var_b) / 2).
pub fn standardized_mean_differences(a: &StudySample, b: &StudySample) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        bail!(Argument, "samples have {} and {} covariates", a.dim(), b.dim());
    }
    Ok((0..a.dim())
        .map(|j| {
            let ca = a.covariates().col(j);
            let cb = b.covariates().col(j);
            let pooled = libm::sqrt(0.5 * (variance(&ca) + variance(&cb)));
            if pooled > 0.0 {
                (mean(&cb) - mean(&ca)) / pooled
            } else {
                0.0
            }
        })
        .collect())
}

pub fn describe(spec: &DgmSpec) -> String {
    let lin = match spec.linearity {
        Linearity::Linear => "linear",
        Linearity::Nonlinear => "nonlinear",
    };
    if spec.perfect_compliance {
        format!("{lin}, perfect compliance, n={}", spec.n)
    } else {
        format!("{lin}, strength {}, n={}", spec.strength, spec.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(linearity: Linearity, strength: f64) -> DgmSpec {
        DgmSpec { n: 400, calibration_draws: 50_000, ..DgmSpec::new(linearity, strength) }
    }

    #[test]
    fn defaults_match_design_table() {
        let s = DgmSpec::default();
        assert_eq!(s.alpha[1..], [0.4, 0.4, 0.4, -0.4, -0.4, -0.4]);
        assert_eq!(s.gamma[1..], [0.1, 0.1, 0.1, -0.1, -0.1, -0.1]);
        assert_eq!(s.theta[1..], [0.4, 0.4, 0.4, -0.8, -0.8, -0.8]);
        assert_eq!(s.beta[0], 1.0);
        assert_eq!(s.beta[7..], [1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
        let c = s.covariance_matrix();
        assert_eq!(c[0], 1.5);
        assert_eq!(c[1], 0.3);
        assert_eq!(c[3], 0.0);
        assert_eq!(c[3 * P + 5], 0.3);
    }

    #[test]
    fn strata_rule_holds_for_every_unit() {
        let dgm = calibrate(&small(Linearity::Nonlinear, 0.5)).unwrap();
        let c = dgm.gen_cohorts_seeded(3).unwrap();
        for cohort in [&c.a, &c.b] {
            for i in 0..cohort.strata.len() {
                let d = cohort.sample.treatment()[i];
                match cohort.strata[i] {
                    COMPLIER => assert_eq!(d, cohort.sample.instrument()[i]),
                    ALWAYS => assert_eq!(d, 1),
                    _ => assert_eq!(d, 0),
                }
            }
        }
        assert_eq!(c.b.sample.covariates().row(0), c.a.sample.covariates().row(c.b_rows[0]));
    }

    #[test]
    fn no_modifiers_means_late_equals_effect() {
        let mut s = small(Linearity::Linear, 0.3);
        for b in &mut s.beta[1..7] {
            *b = 0.0;
        }
        let dgm = calibrate(&s).unwrap();
        let t = ground_truth_late(&dgm, 3).unwrap();
        assert_eq!(t.late_a, 1.0);
        assert_eq!(t.late_b, 1.0);
        assert_eq!(t.ate_a, 1.0);
    }

    #[test]
    fn zero_sampling_coefficients_give_uniform_bootstrap() {
        let s = DgmSpec { alpha: [0.0; 7], ..small(Linearity::Linear, 0.5) };
        let dgm = calibrate(&s).unwrap();
        assert!(dgm.calibration.alpha0.abs() < 1e-9);
        assert_eq!(dgm.sampling_prob(&[1.0; 6]), 0.5);
    }

    #[test]
    fn perfect_compliance_makes_everyone_a_complier() {
        let s = DgmSpec { perfect_compliance: true, ..small(Linearity::Linear, 0.5) };
        let dgm = calibrate(&s).unwrap();
        let c = dgm.gen_cohorts_seeded(1).unwrap();
        assert!(c.a.strata.iter().all(|&v| v == COMPLIER));
        assert_eq!(c.b.sample.treatment(), c.b.sample.instrument());
    }

    #[test]
    fn seeded_cohorts_repeat() {
        let dgm = calibrate(&small(Linearity::Linear, 0.8)).unwrap();
        assert_eq!(dgm.gen_cohorts_seeded(9).unwrap(), dgm.gen_cohorts_seeded(9).unwrap());
    }

    #[test]
    fn intercept_solver_hits_target() {
        let idx: Vec<f64> = (0..1000).map(|i| (i as f64 / 100.0).sin() * 3.0).collect();
        for target in [0.1, 0.5, 0.93] {
            let c = solve_intercept(&idx, target, 1e-3);
            let share = mean(&idx.iter().map(|&v| expit(c + v)).collect::<Vec<_>>());
            assert!((share - target).abs() < 1e-6);
        }
    }

    #[test]
    fn cohort_split_shapes_and_errors() {
        let dgm = calibrate(&small(Linearity::Linear, 0.5)).unwrap();
        let c = dgm.gen_cohorts_seeded(2).unwrap();
        let (t, cur) = cohort_split(&c.a.sample, 0.0, &[0.1; 6], 4).unwrap();
        assert_eq!(t, c.a.sample.clone().with_label(Study::A));
        assert_eq!(cur.len(), t.len());
        assert_eq!(cur.label(), Study::B);
        assert!(cohort_split(&c.a.sample, 0.0, &[0.1; 5], 4).is_err());
    }
}
